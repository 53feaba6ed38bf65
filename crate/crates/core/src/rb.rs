//! Random instance generation following the RB model.
//!
//! Parameters `(arity m, variables n, domain exponent, density, tightness,
//! weight range)` determine the instance shape exactly: domain size
//! `d = round(n^gamma)`, constraint count `e = round(beta * n * ln n)`,
//! and `floor(rho * d^m)` forbidden tuples per constraint. Remaining tuples
//! draw integer weights uniformly from `[0, delta]`. Constraints are sampled
//! with repetition (the scope pool is smaller than `e` for small `n`), each
//! over a sorted scope of distinct variables. Generation is a pure function
//! of the seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::instance::{ConstraintFunction, CopInstance, Value, MAX_ARITY, MAX_DOMAIN};

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid parameter: {0}")]
    ParamError(String),
}

/// RB-model parameters. `tightness` is the fraction of forbidden tuples per
/// constraint; `weight_range` is the inclusive upper bound on integer tuple
/// weights (0 yields a pure CSP).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbParams {
    pub arity: usize,
    pub num_variables: usize,
    pub domain_exponent: f64,
    pub density: f64,
    pub tightness: f64,
    pub weight_range: u32,
    pub seed: u64,
}

impl RbParams {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.arity < 2 || self.arity > MAX_ARITY {
            return Err(GenError::ParamError(format!("arity {} outside 2..={MAX_ARITY}", self.arity)));
        }
        if self.num_variables < 2 {
            return Err(GenError::ParamError("need at least 2 variables".into()));
        }
        if !(self.domain_exponent > 0.0) {
            return Err(GenError::ParamError("domain exponent must be > 0".into()));
        }
        if !(self.density > 0.0) {
            return Err(GenError::ParamError("density must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.tightness) {
            return Err(GenError::ParamError("tightness must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Uniform domain size `d = round(n^gamma)`.
    pub fn domain_size(&self) -> usize {
        (self.num_variables as f64).powf(self.domain_exponent).round() as usize
    }

    /// Constraint count `e = round(beta * n * ln n)`.
    pub fn constraint_count(&self) -> usize {
        let n = self.num_variables as f64;
        (self.density * n * n.ln()).round() as usize
    }

    /// Forbidden tuples per constraint: `floor(rho * d^m)`.
    pub fn forbidden_per_constraint(&self) -> usize {
        let total = (self.domain_size() as f64).powi(self.arity as i32);
        (self.tightness * total).floor() as usize
    }
}

/// Generates one instance. Deterministic for a given `params.seed`.
pub fn rb_generate(params: &RbParams) -> Result<CopInstance, GenError> {
    params.validate()?;
    let n = params.num_variables;
    let m = params.arity;
    let d = params.domain_size();
    let e = params.constraint_count();
    let forbidden = params.forbidden_per_constraint();

    if d < 1 || d > MAX_DOMAIN {
        return Err(GenError::ParamError(format!("domain size {d} outside 1..={MAX_DOMAIN}")));
    }
    let total_tuples = (d as u64).pow(m as u32);
    if total_tuples > 1 << 24 {
        return Err(GenError::ParamError(format!("{total_tuples} tuples per constraint is too large")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let domains: Vec<Vec<Value>> = vec![(0..d as Value).collect(); n];

    // Uniform scopes of distinct variables, drawn with repetition.
    let mut scopes = Vec::with_capacity(e);
    while scopes.len() < e {
        let mut scope = Vec::with_capacity(m);
        while scope.len() < m {
            let v = rng.random_range(0..n);
            if !scope.contains(&v) {
                scope.push(v);
            }
        }
        scope.sort_unstable();
        scopes.push(scope);
    }

    let mut constraints = Vec::with_capacity(e);
    let mut tuple_indices: Vec<u32> = (0..total_tuples as u32).collect();
    for scope in scopes {
        // Forbid a uniform sample of tuple indices via partial Fisher-Yates.
        let (head, _) = tuple_indices.partial_shuffle(&mut rng, forbidden);
        let mut banned = vec![false; total_tuples as usize];
        for &idx in head.iter() {
            banned[idx as usize] = true;
        }
        let mut rows = Vec::with_capacity(total_tuples as usize - forbidden);
        for idx in 0..total_tuples {
            if banned[idx as usize] {
                continue;
            }
            let mut tuple = vec![0 as Value; m];
            let mut rest = idx;
            for slot in (0..m).rev() {
                tuple[slot] = (rest % d as u64) as Value;
                rest /= d as u64;
            }
            let weight = rng.random_range(0..=params.weight_range);
            rows.push((tuple, weight as f64));
        }
        let ctr = ConstraintFunction::new(scope, rows)
            .map_err(|err| GenError::ParamError(err.to_string()))?;
        constraints.push(ctr);
    }

    CopInstance::new(domains, constraints, m, params.weight_range as f64)
        .map_err(|err| GenError::ParamError(err.to_string()))
}
