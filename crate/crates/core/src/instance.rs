//! Instance model: variables with finite domains and weighted table constraints.
//!
//! An instance assigns every constraint a table of permitted value tuples with
//! non-negative weights. Tuples absent from a table are hard-forbidden. A
//! complete assignment is feasible when every constraint's projection is a
//! permitted tuple; its objective is the sum of the selected tuple weights.

use rustc_hash::FxHashMap;
use thiserror::Error;

/// Domain values are small non-negative integers (generated domains are
/// `0..d`). Values must stay below 2^16 so tuples pack into a `u64` key.
pub type Value = u32;

/// Largest value representable in a packed tuple key.
pub const MAX_VALUE: Value = u16::MAX as Value;
/// Largest supported constraint scope size.
pub const MAX_ARITY: usize = 4;
/// Largest supported per-variable domain size (domains are tracked as `u64`
/// bitmasks during search).
pub const MAX_DOMAIN: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("variable {0} has no binding")]
    UnboundVariable(usize),
    #[error("constraint {ctr}: {msg}")]
    BadConstraint { ctr: usize, msg: String },
    #[error("variable {var}: {msg}")]
    BadDomain { var: usize, msg: String },
    #[error("{0}")]
    BadInstance(String),
}

/// Packs a value tuple into a single `u64` key, 16 bits per position.
///
/// Callers must guarantee `values.len() <= MAX_ARITY` and every value
/// `<= MAX_VALUE`; instance validation enforces both.
pub fn pack_tuple(values: &[Value]) -> u64 {
    debug_assert!(values.len() <= MAX_ARITY);
    let mut key = 0u64;
    for (i, &v) in values.iter().enumerate() {
        debug_assert!(v <= MAX_VALUE);
        key |= (v as u64) << (16 * i);
    }
    key
}

/// Inverse of [`pack_tuple`] for a tuple of known arity.
pub fn unpack_tuple(key: u64, arity: usize) -> Vec<Value> {
    (0..arity).map(|i| ((key >> (16 * i)) & 0xffff) as Value).collect()
}

/// A weighted table constraint: an ordered scope of variables plus a relation
/// mapping permitted value tuples to non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintFunction {
    scope: Vec<usize>,
    relation: FxHashMap<u64, f64>,
    max_weight: f64,
}

impl ConstraintFunction {
    /// Builds a constraint from `(tuple, weight)` rows. Scope indices must be
    /// distinct and tuple rows unique; weights must be finite and >= 0.
    pub fn new(
        scope: Vec<usize>,
        tuples: impl IntoIterator<Item = (Vec<Value>, f64)>,
    ) -> Result<Self, InstanceError> {
        let bad = |msg: String| InstanceError::BadConstraint { ctr: usize::MAX, msg };
        if scope.is_empty() || scope.len() > MAX_ARITY {
            return Err(bad(format!("scope size {} outside 1..={MAX_ARITY}", scope.len())));
        }
        let mut seen = scope.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != scope.len() {
            return Err(bad("scope indices must be distinct".into()));
        }
        let mut relation = FxHashMap::default();
        let mut max_weight = 0.0f64;
        for (tuple, weight) in tuples {
            if tuple.len() != scope.len() {
                return Err(bad(format!(
                    "tuple arity {} does not match scope size {}",
                    tuple.len(),
                    scope.len()
                )));
            }
            if tuple.iter().any(|&v| v > MAX_VALUE) {
                return Err(bad(format!("tuple value exceeds {MAX_VALUE}")));
            }
            if !weight.is_finite() || weight < 0.0 {
                return Err(bad(format!("weight {weight} must be finite and non-negative")));
            }
            if relation.insert(pack_tuple(&tuple), weight).is_some() {
                return Err(bad(format!("duplicate tuple {tuple:?}")));
            }
            max_weight = max_weight.max(weight);
        }
        Ok(Self { scope, relation, max_weight })
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn arity(&self) -> usize {
        self.scope.len()
    }

    /// Weight of a permitted tuple, or `None` when the tuple is forbidden.
    pub fn weight(&self, tuple: &[Value]) -> Option<f64> {
        self.relation.get(&pack_tuple(tuple)).copied()
    }

    pub fn contains(&self, tuple: &[Value]) -> bool {
        self.relation.contains_key(&pack_tuple(tuple))
    }

    pub fn tuple_count(&self) -> usize {
        self.relation.len()
    }

    /// Largest weight over the original relation (0 for an empty relation).
    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }

    /// Iterates `(packed_key, weight)` rows in unspecified order.
    pub fn rows(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.relation.iter().map(|(&k, &w)| (k, w))
    }

    /// Relation rows decoded and sorted lexicographically; used wherever a
    /// stable order matters (file output, hashing).
    pub fn sorted_rows(&self) -> Vec<(Vec<Value>, f64)> {
        let mut rows: Vec<(Vec<Value>, f64)> =
            self.rows().map(|(k, w)| (unpack_tuple(k, self.arity()), w)).collect();
        rows.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        rows
    }
}

/// A partial assignment of values to variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    values: Vec<Option<Value>>,
}

impl Assignment {
    pub fn new(num_variables: usize) -> Self {
        Self { values: vec![None; num_variables] }
    }

    pub fn from_values(values: Vec<Option<Value>>) -> Self {
        Self { values }
    }

    /// Builds a complete assignment from one value per variable.
    pub fn complete(values: &[Value]) -> Self {
        Self { values: values.iter().map(|&v| Some(v)).collect() }
    }

    pub fn bind(&mut self, var: usize, value: Value) {
        self.values[var] = Some(value);
    }

    pub fn get(&self, var: usize) -> Option<Value> {
        self.values.get(var).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn bound_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// Result of evaluating a complete assignment against an instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Feasible(f64),
    Infeasible,
}

impl Objective {
    pub fn value(self) -> Option<f64> {
        match self {
            Objective::Feasible(v) => Some(v),
            Objective::Infeasible => None,
        }
    }

    pub fn is_feasible(self) -> bool {
        matches!(self, Objective::Feasible(_))
    }
}

/// An immutable constraint-optimization instance.
///
/// `arity` is the nominal (maximum) scope size; individual constraints may
/// use smaller scopes, which lets cost matrices be expressed as unary tables
/// next to binary structural constraints.
#[derive(Debug, Clone)]
pub struct CopInstance {
    domains: Vec<Vec<Value>>,
    constraints: Vec<ConstraintFunction>,
    arity: usize,
    delta: f64,
    // Derived lookup tables, rebuilt by the constructor.
    var_constraints: Vec<Vec<u32>>,
    value_pos: Vec<Vec<u8>>,
}

const NO_POS: u8 = u8::MAX;

impl PartialEq for CopInstance {
    fn eq(&self, other: &Self) -> bool {
        self.domains == other.domains
            && self.constraints == other.constraints
            && self.arity == other.arity
            && self.delta == other.delta
    }
}

impl CopInstance {
    pub fn new(
        domains: Vec<Vec<Value>>,
        constraints: Vec<ConstraintFunction>,
        arity: usize,
        delta: f64,
    ) -> Result<Self, InstanceError> {
        let n = domains.len();
        if n == 0 {
            return Err(InstanceError::BadInstance("instance needs at least one variable".into()));
        }
        if arity == 0 || arity > MAX_ARITY {
            return Err(InstanceError::BadInstance(format!("arity {arity} outside 1..={MAX_ARITY}")));
        }
        if !delta.is_finite() || delta < 0.0 {
            return Err(InstanceError::BadInstance(format!("delta {delta} must be finite and >= 0")));
        }
        for (var, dom) in domains.iter().enumerate() {
            if dom.is_empty() || dom.len() > MAX_DOMAIN {
                return Err(InstanceError::BadDomain {
                    var,
                    msg: format!("domain size {} outside 1..={MAX_DOMAIN}", dom.len()),
                });
            }
            if dom.iter().any(|&v| v > MAX_VALUE) {
                return Err(InstanceError::BadDomain { var, msg: format!("value exceeds {MAX_VALUE}") });
            }
            let mut sorted = dom.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != dom.len() {
                return Err(InstanceError::BadDomain { var, msg: "duplicate domain value".into() });
            }
        }
        // Value -> domain-position lookup per variable.
        let value_pos: Vec<Vec<u8>> = domains
            .iter()
            .map(|dom| {
                let width = dom.iter().copied().max().unwrap_or(0) as usize + 1;
                let mut pos = vec![NO_POS; width];
                for (i, &v) in dom.iter().enumerate() {
                    pos[v as usize] = i as u8;
                }
                pos
            })
            .collect();
        let mut var_constraints = vec![Vec::new(); n];
        for (j, ctr) in constraints.iter().enumerate() {
            let err = |msg: String| InstanceError::BadConstraint { ctr: j, msg };
            if ctr.arity() > arity {
                return Err(err(format!("scope size {} exceeds instance arity {arity}", ctr.arity())));
            }
            for &var in ctr.scope() {
                if var >= n {
                    return Err(err(format!("scope references unknown variable {var}")));
                }
                var_constraints[var].push(j as u32);
            }
            for (key, weight) in ctr.rows() {
                let tuple = unpack_tuple(key, ctr.arity());
                for (p, &var) in ctr.scope().iter().enumerate() {
                    let v = tuple[p] as usize;
                    if value_pos[var].get(v).copied().unwrap_or(NO_POS) == NO_POS {
                        return Err(err(format!("tuple value {v} not in domain of variable {var}")));
                    }
                }
                if weight > delta {
                    return Err(err(format!("weight {weight} exceeds delta {delta}")));
                }
            }
        }
        Ok(Self { domains, constraints, arity, delta, var_constraints, value_pos })
    }

    pub fn num_variables(&self) -> usize {
        self.domains.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn domain(&self, var: usize) -> &[Value] {
        &self.domains[var]
    }

    pub fn domains(&self) -> &[Vec<Value>] {
        &self.domains
    }

    pub fn constraints(&self) -> &[ConstraintFunction] {
        &self.constraints
    }

    pub fn constraint(&self, idx: usize) -> &ConstraintFunction {
        &self.constraints[idx]
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn max_domain_size(&self) -> usize {
        self.domains.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Indices of constraints whose scope contains `var`.
    pub fn constraints_of(&self, var: usize) -> &[u32] {
        &self.var_constraints[var]
    }

    /// Position of `value` within `var`'s original domain, if present.
    pub fn value_position(&self, var: usize, value: Value) -> Option<usize> {
        match self.value_pos[var].get(value as usize) {
            Some(&p) if p != NO_POS => Some(p as usize),
            _ => None,
        }
    }

    /// Rescales all weights into `[0, 1]` by dividing by delta. A no-op for
    /// `delta == 1`; an error for pure-CSP instances (`delta == 0`).
    pub fn normalize_weights(&self) -> Result<CopInstance, InstanceError> {
        if self.delta <= 0.0 {
            return Err(InstanceError::BadInstance("cannot normalize with delta = 0".into()));
        }
        let scale = self.delta;
        let constraints = self
            .constraints
            .iter()
            .map(|c| {
                let rows: Vec<(Vec<Value>, f64)> =
                    c.sorted_rows().into_iter().map(|(t, w)| (t, w / scale)).collect();
                ConstraintFunction::new(c.scope().to_vec(), rows).expect("rescaled rows stay valid")
            })
            .collect();
        CopInstance::new(self.domains.clone(), constraints, self.arity, 1.0)
    }
}

/// Sums the selected tuple weight of every constraint under a complete
/// assignment. Returns `Infeasible` as soon as any constraint's projection is
/// missing from its relation.
pub fn evaluate_objective(
    instance: &CopInstance,
    assignment: &Assignment,
) -> Result<Objective, InstanceError> {
    let mut total = 0.0f64;
    let mut tuple = Vec::with_capacity(instance.arity());
    for ctr in instance.constraints() {
        tuple.clear();
        for &var in ctr.scope() {
            match assignment.get(var) {
                Some(v) => tuple.push(v),
                None => return Err(InstanceError::UnboundVariable(var)),
            }
        }
        match ctr.weight(&tuple) {
            Some(w) => total += w,
            None => return Ok(Objective::Infeasible),
        }
    }
    // Unscoped variables still need bindings for the assignment to be complete.
    if !assignment.is_complete() {
        let var = (0..instance.num_variables())
            .find(|&v| assignment.get(v).is_none())
            .unwrap_or(0);
        return Err(InstanceError::UnboundVariable(var));
    }
    Ok(Objective::Feasible(total))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_assignment_objective_sums_marked_entries() {
        let inst = fixtures::task_assignment();
        // worker 0 -> task 3, worker 1 -> task 1, worker 2 -> task 2, worker 3 -> task 0
        let a = Assignment::complete(&[3, 1, 2, 0]);
        assert_eq!(evaluate_objective(&inst, &a).unwrap(), Objective::Feasible(13.0));
    }

    #[test]
    fn zero_delta_consistent_assignment_costs_zero() {
        let ctr =
            ConstraintFunction::new(vec![0, 1], vec![(vec![0, 1], 0.0), (vec![1, 0], 0.0)]).unwrap();
        let inst = CopInstance::new(vec![vec![0, 1], vec![0, 1]], vec![ctr], 2, 0.0).unwrap();
        let a = Assignment::complete(&[0, 1]);
        assert_eq!(evaluate_objective(&inst, &a).unwrap(), Objective::Feasible(0.0));
    }

    #[test]
    fn disallowed_projection_is_infeasible() {
        let inst = fixtures::two_var_pair();
        let a = Assignment::complete(&[1, 1]);
        assert_eq!(evaluate_objective(&inst, &a).unwrap(), Objective::Infeasible);
    }

    #[test]
    fn unbound_variable_is_an_error() {
        let inst = fixtures::two_var_pair();
        let mut a = Assignment::new(2);
        a.bind(0, 0);
        assert_eq!(
            evaluate_objective(&inst, &a).unwrap_err(),
            InstanceError::UnboundVariable(1)
        );
    }

    #[test]
    fn objective_ignores_binding_order() {
        let inst = fixtures::task_assignment();
        let mut forward = Assignment::new(4);
        for (var, val) in [(0, 3), (1, 1), (2, 2), (3, 0)] {
            forward.bind(var, val);
        }
        let mut backward = Assignment::new(4);
        for (var, val) in [(3, 0), (2, 2), (1, 1), (0, 3)] {
            backward.bind(var, val);
        }
        assert_eq!(
            evaluate_objective(&inst, &forward).unwrap(),
            evaluate_objective(&inst, &backward).unwrap()
        );
    }

    #[test]
    fn constraint_rejects_duplicate_tuples_and_scope() {
        assert!(ConstraintFunction::new(vec![0, 0], vec![(vec![0, 0], 0.0)]).is_err());
        assert!(ConstraintFunction::new(
            vec![0, 1],
            vec![(vec![0, 0], 0.0), (vec![0, 0], 1.0)]
        )
        .is_err());
    }

    #[test]
    fn instance_rejects_weight_above_delta() {
        let ctr = ConstraintFunction::new(vec![0], vec![(vec![0], 3.0)]).unwrap();
        let err = CopInstance::new(vec![vec![0]], vec![ctr], 1, 2.0).unwrap_err();
        assert!(matches!(err, InstanceError::BadConstraint { .. }));
    }

    #[test]
    fn instance_rejects_tuple_outside_domain() {
        let ctr = ConstraintFunction::new(vec![0], vec![(vec![5], 0.0)]).unwrap();
        assert!(CopInstance::new(vec![vec![0, 1]], vec![ctr], 1, 0.0).is_err());
    }

    #[test]
    fn normalize_rescales_weights_and_delta() {
        let inst = fixtures::two_var_pair();
        let norm = inst.normalize_weights().unwrap();
        assert_eq!(norm.delta(), 1.0);
        assert_eq!(norm.constraint(0).weight(&[0, 1]), Some(1.0));
        assert!(inst.normalize_weights().is_ok());
        let csp = CopInstance::new(vec![vec![0]], vec![], 1, 0.0).unwrap();
        assert!(csp.normalize_weights().is_err());
    }

    #[test]
    fn pack_unpack_round_trip() {
        let tuple = vec![3, 0, 65535, 7];
        assert_eq!(unpack_tuple(pack_tuple(&tuple), 4), tuple);
    }
}
