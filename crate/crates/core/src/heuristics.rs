//! Variable-ordering heuristics and the raw feature calculators shared with
//! the neural scorer.

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::instance::Value;
use crate::state::SearchState;

/// Raw variable features: current domain size and binding status.
pub const VAR_FEATURE_DIM: usize = 2;
/// Raw constraint features: bound-variable count, dynamic tightness, cost ratio.
pub const CTR_FEATURE_DIM: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum HeuristicError {
    #[error("no unbound variable")]
    NoUnbound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarFeatures {
    pub domain_size: usize,
    pub is_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtrFeatures {
    pub bound_count: usize,
    pub dyn_tightness: f64,
    pub cost_ratio: f64,
}

pub fn var_features(state: &SearchState, var: usize) -> VarFeatures {
    VarFeatures { domain_size: state.domain_size(var), is_bound: state.is_bound(var) }
}

/// Fraction of the current domain product that no permitted tuple supports:
/// `1 - supported / prod(|dom|)`, clamped to `[0, 1]`.
pub fn dyn_tightness(state: &SearchState, ctr: usize) -> f64 {
    let c = state.instance().constraint(ctr);
    let mut product = 1.0f64;
    for &v in c.scope() {
        product *= state.domain_size(v) as f64;
    }
    if product == 0.0 {
        return 1.0;
    }
    let supported = supported_tuples(state, ctr).count() as f64;
    (1.0 - supported / product).clamp(0.0, 1.0)
}

/// Minimum weight over currently supported tuples divided by the maximum
/// weight over the original relation. 0 when the maximum is 0; 1 when no
/// tuple survives.
pub fn cost_ratio(state: &SearchState, ctr: usize) -> f64 {
    let c = state.instance().constraint(ctr);
    if c.max_weight() == 0.0 {
        return 0.0;
    }
    let min_supported = supported_tuples(state, ctr)
        .map(|(_, w)| w)
        .fold(f64::INFINITY, f64::min);
    if min_supported.is_infinite() {
        return 1.0;
    }
    min_supported / c.max_weight()
}

pub fn ctr_features(state: &SearchState, ctr: usize) -> CtrFeatures {
    let c = state.instance().constraint(ctr);
    let bound_count = c.scope().iter().filter(|&&v| state.is_bound(v)).count();
    CtrFeatures {
        bound_count,
        dyn_tightness: dyn_tightness(state, ctr),
        cost_ratio: cost_ratio(state, ctr),
    }
}

/// Variable features scaled for the scorer: domain size relative to the
/// original domain, plus the binding flag.
pub fn normalized_var_features(state: &SearchState, var: usize) -> [f64; VAR_FEATURE_DIM] {
    let f = var_features(state, var);
    let orig = state.instance().domain(var).len() as f64;
    [f.domain_size as f64 / orig, f.is_bound as u8 as f64]
}

/// Constraint features scaled for the scorer: bound count relative to the
/// scope size, plus the two ratio features.
pub fn normalized_ctr_features(state: &SearchState, ctr: usize) -> [f64; CTR_FEATURE_DIM] {
    let f = ctr_features(state, ctr);
    let arity = state.instance().constraint(ctr).arity() as f64;
    [f.bound_count as f64 / arity, f.dyn_tightness, f.cost_ratio]
}

fn supported_tuples<'s>(
    state: &'s SearchState,
    ctr: usize,
) -> impl Iterator<Item = (u64, f64)> + 's {
    let c = state.instance().constraint(ctr);
    let scope = c.scope();
    c.rows().filter(move |&(key, _)| {
        scope.iter().enumerate().all(|(p, &v)| {
            let tv = ((key >> (16 * p)) & 0xffff) as Value;
            state.contains(v, tv)
        })
    })
}

/// Smallest current domain among unbound variables; ties break to the
/// smallest index.
pub fn min_dom(state: &SearchState) -> Result<usize, HeuristicError> {
    state
        .unbound_vars()
        .min_by_key(|&v| (state.domain_size(v), v))
        .ok_or(HeuristicError::NoUnbound)
}

fn active_degree(state: &SearchState, var: usize) -> usize {
    state
        .instance()
        .constraints_of(var)
        .iter()
        .filter(|&&c| {
            state
                .instance()
                .constraint(c as usize)
                .scope()
                .iter()
                .any(|&other| other != var && !state.is_bound(other))
        })
        .count()
}

fn argmin_by_score(
    state: &SearchState,
    score: impl Fn(usize) -> f64,
) -> Result<usize, HeuristicError> {
    let mut best: Option<(f64, usize)> = None;
    for v in state.unbound_vars() {
        let s = score(v);
        match best {
            Some((bs, _)) if s >= bs => {}
            _ => best = Some((s, v)),
        }
    }
    best.map(|(_, v)| v).ok_or(HeuristicError::NoUnbound)
}

/// Domain size over dynamic degree; a variable with no active constraint
/// scores infinity so it is only chosen once every connected variable is
/// bound.
pub fn dom_ddeg(state: &SearchState) -> Result<usize, HeuristicError> {
    argmin_by_score(state, |v| {
        let deg = active_degree(state, v);
        if deg == 0 {
            f64::INFINITY
        } else {
            state.domain_size(v) as f64 / deg as f64
        }
    })
}

/// Domain size over tightness-weighted degree: each active constraint on the
/// variable counts `1 + dyn_tightness`.
pub fn dom_tdeg(state: &SearchState) -> Result<usize, HeuristicError> {
    argmin_by_score(state, |v| {
        let mut weighted = 0.0f64;
        for &c in state.instance().constraints_of(v) {
            let active = state
                .instance()
                .constraint(c as usize)
                .scope()
                .iter()
                .any(|&other| other != v && !state.is_bound(other));
            if active {
                weighted += 1.0 + dyn_tightness(state, c as usize);
            }
        }
        if weighted == 0.0 {
            f64::INFINITY
        } else {
            state.domain_size(v) as f64 / weighted
        }
    })
}

/// Immediate cost of binding `var := value`: the summed weight of every
/// constraint this binding completes, or infinity when it completes a
/// constraint with a forbidden projection.
pub fn binding_cost(state: &SearchState, var: usize, value: Value) -> f64 {
    let mut cost = 0.0f64;
    let mut tuple: Vec<Value> = Vec::new();
    for &c in state.instance().constraints_of(var) {
        let ctr = state.instance().constraint(c as usize);
        let mut completes = true;
        tuple.clear();
        for &sv in ctr.scope() {
            if sv == var {
                tuple.push(value);
            } else {
                match state.bound_value(sv) {
                    Some(b) => tuple.push(b),
                    None => {
                        completes = false;
                        break;
                    }
                }
            }
        }
        if completes {
            match ctr.weight(&tuple) {
                Some(w) => cost += w,
                None => return f64::INFINITY,
            }
        }
    }
    cost
}

/// Greedy regret ordering: picks the unbound variable whose cheapest
/// immediate binding is furthest below its second-cheapest (largest regret
/// first, infinite for singleton domains). Ties break to the smallest index.
pub fn max_regret(state: &SearchState) -> Result<usize, HeuristicError> {
    let mut best: Option<(f64, usize)> = None;
    for v in state.unbound_vars() {
        let mut lo = f64::INFINITY;
        let mut second = f64::INFINITY;
        for value in state.domain_values(v) {
            let c = binding_cost(state, v, value);
            if c < lo {
                second = lo;
                lo = c;
            } else if c < second {
                second = c;
            }
        }
        let regret = second - lo;
        let better = match best {
            Some((br, _)) => regret > br,
            None => true,
        };
        if better {
            best = Some((regret, v));
        }
    }
    best.map(|(_, v)| v).ok_or(HeuristicError::NoUnbound)
}

/// Running impact averages per `(variable, value)` pair, fed by the solver
/// after every propagation.
#[derive(Debug, Default, Clone)]
pub struct ImpactStats {
    sums: FxHashMap<(u32, Value), (f64, u64)>,
}

impl ImpactStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `1 - P_after / P_before` for one binding attempt. A wipeout is
    /// reported with `after == 0`, giving impact 1.
    pub fn record(&mut self, var: usize, value: Value, before: f64, after: f64) {
        if before <= 0.0 {
            return;
        }
        let impact = 1.0 - after / before;
        let entry = self.sums.entry((var as u32, value)).or_insert((0.0, 0));
        entry.0 += impact;
        entry.1 += 1;
    }

    pub fn impact(&self, var: usize, value: Value) -> f64 {
        match self.sums.get(&(var as u32, value)) {
            Some(&(sum, n)) => sum / n as f64,
            None => 0.0,
        }
    }

    /// Mean impact over the variable's current values.
    pub fn mean_impact(&self, state: &SearchState, var: usize) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for value in state.domain_values(var) {
            total += self.impact(var, value);
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// Unbound variable with maximum mean impact; ties break to the smallest
    /// index.
    pub fn select(&self, state: &SearchState) -> Result<usize, HeuristicError> {
        let mut best: Option<(f64, usize)> = None;
        for v in state.unbound_vars() {
            let s = self.mean_impact(state, v);
            let better = match best {
                Some((bs, _)) => s > bs,
                None => true,
            };
            if better {
                best = Some((s, v));
            }
        }
        best.map(|(_, v)| v).ok_or(HeuristicError::NoUnbound)
    }
}

/// Variable-ordering strategy driven by the solver. `observe` is called after
/// every binding attempt so stateful strategies can learn from propagation
/// effects; implementations must not mutate the state.
pub trait VarOrdering {
    fn select_var(&mut self, state: &SearchState) -> Result<usize, HeuristicError>;
    fn observe(&mut self, _var: usize, _value: Value, _before: f64, _after: f64) {}
    fn name(&self) -> &'static str;
}

pub struct MinDom;

impl VarOrdering for MinDom {
    fn select_var(&mut self, state: &SearchState) -> Result<usize, HeuristicError> {
        min_dom(state)
    }
    fn name(&self) -> &'static str {
        "mindom"
    }
}

pub struct DomDdeg;

impl VarOrdering for DomDdeg {
    fn select_var(&mut self, state: &SearchState) -> Result<usize, HeuristicError> {
        dom_ddeg(state)
    }
    fn name(&self) -> &'static str {
        "domddeg"
    }
}

pub struct DomTdeg;

impl VarOrdering for DomTdeg {
    fn select_var(&mut self, state: &SearchState) -> Result<usize, HeuristicError> {
        dom_tdeg(state)
    }
    fn name(&self) -> &'static str {
        "domtdeg"
    }
}

pub struct MaxRegret;

impl VarOrdering for MaxRegret {
    fn select_var(&mut self, state: &SearchState) -> Result<usize, HeuristicError> {
        max_regret(state)
    }
    fn name(&self) -> &'static str {
        "greedy"
    }
}

#[derive(Default)]
pub struct Impact {
    stats: ImpactStats,
}

impl Impact {
    pub fn new() -> Self {
        Self::default()
    }
}

impl VarOrdering for Impact {
    fn select_var(&mut self, state: &SearchState) -> Result<usize, HeuristicError> {
        self.stats.select(state)
    }
    fn observe(&mut self, var: usize, value: Value, before: f64, after: f64) {
        self.stats.record(var, value, before, after);
    }
    fn name(&self) -> &'static str {
        "impact"
    }
}

/// Value-ordering strategy: the admissible values of `var` in try order.
pub trait ValueOrdering {
    fn order_values(&self, state: &SearchState, var: usize) -> Vec<Value>;
}

/// Ascending immediate binding cost, ties by ascending value.
pub struct MinCostValues;

impl ValueOrdering for MinCostValues {
    fn order_values(&self, state: &SearchState, var: usize) -> Vec<Value> {
        let mut values: Vec<(f64, Value)> =
            state.domain_values(var).map(|v| (binding_cost(state, var, v), v)).collect();
        values.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        values.into_iter().map(|(_, v)| v).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{fixtures, ConstraintFunction, CopInstance};
    use crate::state::SearchState;

    fn no_constraint_instance(domains: Vec<Vec<Value>>) -> CopInstance {
        CopInstance::new(domains, vec![], 2, 0.0).unwrap()
    }

    fn all_pairs(a: usize, b: usize, da: usize, db: usize) -> ConstraintFunction {
        let rows = (0..da as Value)
            .flat_map(|x| (0..db as Value).map(move |y| (vec![x, y], 0.0)));
        ConstraintFunction::new(vec![a, b], rows).unwrap()
    }

    #[test]
    fn min_dom_picks_smallest_domain_then_index() {
        let inst = no_constraint_instance(vec![
            (0..3).collect(),
            (0..2).collect(),
            (0..5).collect(),
        ]);
        let st = SearchState::new(&inst);
        assert_eq!(min_dom(&st), Ok(1));

        let tied = no_constraint_instance(vec![(0..3).collect(); 3]);
        let st = SearchState::new(&tied);
        assert_eq!(min_dom(&st), Ok(0));
    }

    #[test]
    fn min_dom_skips_bound_variables() {
        let inst = CopInstance::new(
            vec![(0..4).collect(), (0..2).collect(), (0..3).collect()],
            vec![all_pairs(0, 1, 4, 2), all_pairs(1, 2, 2, 3)],
            2,
            0.0,
        )
        .unwrap();
        let mut st = SearchState::new(&inst);
        st.propagate(1, 0);
        assert_eq!(min_dom(&st), Ok(2));
        assert!(matches!(min_dom(&SearchState::new(&inst)), Ok(1)));
    }

    #[test]
    fn min_dom_errors_when_everything_is_bound() {
        let inst = no_constraint_instance(vec![vec![0]]);
        let mut st = SearchState::new(&inst);
        st.propagate(0, 0);
        assert_eq!(min_dom(&st), Err(HeuristicError::NoUnbound));
    }

    #[test]
    fn dom_ddeg_tie_breaks_to_smaller_index() {
        // x0: dom 4 with 2 active constraints; x1: dom 2 with 1 active.
        // Scores tie at 2.0 (x2: 5/2=2.5, x3: 5/1=5), so index order picks x0.
        let inst = CopInstance::new(
            vec![(0..4).collect(), (0..2).collect(), (0..5).collect(), (0..5).collect()],
            vec![all_pairs(0, 2, 4, 5), all_pairs(0, 3, 4, 5), all_pairs(1, 2, 2, 5)],
            2,
            0.0,
        )
        .unwrap();
        let st = SearchState::new(&inst);
        assert_eq!(dom_ddeg(&st), Ok(0));
    }

    #[test]
    fn dom_ddeg_defers_isolated_variables() {
        let inst = CopInstance::new(
            vec![(0..2).collect(), (0..5).collect(), (0..5).collect()],
            vec![all_pairs(1, 2, 5, 5)],
            2,
            0.0,
        )
        .unwrap();
        let st = SearchState::new(&inst);
        // Variable 0 has the smallest domain but no active constraint.
        assert_eq!(dom_ddeg(&st), Ok(1));
    }

    #[test]
    fn dom_ddeg_returns_the_single_unbound_variable() {
        let inst = no_constraint_instance(vec![vec![0, 1]]);
        let st = SearchState::new(&inst);
        assert_eq!(dom_ddeg(&st), Ok(0));
    }

    #[test]
    fn dom_tdeg_prefers_tight_neighborhoods() {
        // Same domains and degrees; variable 1's constraint is tighter.
        let loose = all_pairs(0, 2, 3, 3);
        let tight = ConstraintFunction::new(vec![1, 3], vec![(vec![0, 0], 0.0)]).unwrap();
        let inst = CopInstance::new(
            vec![(0..3).collect(), (0..3).collect(), (0..3).collect(), (0..3).collect()],
            vec![loose, tight],
            2,
            0.0,
        )
        .unwrap();
        let st = SearchState::new(&inst);
        assert_eq!(dom_tdeg(&st), Ok(1));
    }

    #[test]
    fn dyn_tightness_counts_supported_fraction() {
        let inst = fixtures::two_var_pair();
        let st = SearchState::new(&inst);
        let t = dyn_tightness(&st, 0);
        assert!((t - (1.0 - 2.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn dyn_tightness_is_zero_for_full_relation_and_one_when_pruned() {
        let inst = CopInstance::new(
            vec![(0..2).collect(), (0..2).collect()],
            vec![all_pairs(0, 1, 2, 2)],
            2,
            0.0,
        )
        .unwrap();
        let st = SearchState::new(&inst);
        assert_eq!(dyn_tightness(&st, 0), 0.0);

        let empty = ConstraintFunction::new(vec![0, 1], vec![]).unwrap();
        let inst = CopInstance::new(
            vec![(0..2).collect(), (0..2).collect()],
            vec![empty],
            2,
            0.0,
        )
        .unwrap();
        let st = SearchState::new(&inst);
        assert_eq!(dyn_tightness(&st, 0), 1.0);
    }

    #[test]
    fn forward_checking_relaxes_local_tightness() {
        // Pruning unsupported values leaves only supported combinations, so
        // the constraint that drove the pruning ends up locally looser.
        let inst = fixtures::two_var_pair();
        let mut st = SearchState::new(&inst);
        let before = dyn_tightness(&st, 0);
        st.propagate(0, 0);
        assert!(dyn_tightness(&st, 0) <= before);
        assert_eq!(dyn_tightness(&st, 0), 0.0);
    }

    #[test]
    fn cost_ratio_cases() {
        // Supported weights {2, 5}, original max 5 -> 0.4.
        let ctr = ConstraintFunction::new(
            vec![0, 1],
            vec![(vec![0, 0], 2.0), (vec![0, 1], 5.0), (vec![1, 0], 1.0)],
        )
        .unwrap();
        let inst = CopInstance::new(
            vec![(0..2).collect(), (0..2).collect()],
            vec![ctr],
            2,
            5.0,
        )
        .unwrap();
        let mut st = SearchState::new(&inst);
        st.propagate(0, 0);
        assert!((cost_ratio(&st, 0) - 0.4).abs() < 1e-12);

        // Zero-delta instances score 0 everywhere.
        let inst = fixtures::two_var_pair();
        let zero = CopInstance::new(
            vec![vec![0, 1], vec![0, 1]],
            vec![all_pairs(0, 1, 2, 2)],
            2,
            0.0,
        )
        .unwrap();
        assert_eq!(cost_ratio(&SearchState::new(&zero), 0), 0.0);
        drop(inst);

        // All tuples pruned scores the sentinel 1.
        let empty = ConstraintFunction::new(vec![0, 1], vec![(vec![0, 0], 3.0)]).unwrap();
        let inst =
            CopInstance::new(vec![vec![0, 1], vec![0, 1]], vec![empty], 2, 3.0).unwrap();
        let mut st = SearchState::new(&inst);
        assert_eq!(st.propagate(0, 1), crate::state::Propagation::Wipeout);
        assert_eq!(cost_ratio(&st, 0), 1.0);
        st.undo();
    }

    #[test]
    fn impact_statistics_follow_product_reduction() {
        let inst = no_constraint_instance(vec![(0..2).collect(), (0..4).collect()]);
        let st = SearchState::new(&inst);
        let mut stats = ImpactStats::new();
        // Fresh table: tie on 0 impact picks index 0.
        assert_eq!(stats.select(&st), Ok(0));
        // A propagation halving the product gives impact 0.5.
        stats.record(1, 0, 8.0, 4.0);
        assert_eq!(stats.impact(1, 0), 0.5);
        // A variable whose bindings always wipe out converges to impact 1.
        stats.record(0, 0, 8.0, 0.0);
        stats.record(0, 1, 8.0, 0.0);
        assert_eq!(stats.impact(0, 0), 1.0);
        assert_eq!(stats.select(&st), Ok(0));
    }

    #[test]
    fn feature_dimensions_match_contract() {
        let inst = fixtures::two_var_pair();
        let st = SearchState::new(&inst);
        assert_eq!(normalized_var_features(&st, 0).len(), VAR_FEATURE_DIM);
        assert_eq!(normalized_ctr_features(&st, 0).len(), CTR_FEATURE_DIM);
        let f = var_features(&st, 0);
        assert_eq!(f, VarFeatures { domain_size: 3, is_bound: false });
    }

    #[test]
    fn min_cost_values_orders_by_completed_weight() {
        let inst = fixtures::task_assignment();
        let st = SearchState::new(&inst);
        // Worker 1's unary row is [6, 2, 0, 7] -> cheapest task first.
        assert_eq!(MinCostValues.order_values(&st, 1), vec![2, 1, 0, 3]);
    }

    #[test]
    fn max_regret_reproduces_the_greedy_assignment_order() {
        let inst = fixtures::task_assignment();
        let mut st = SearchState::new(&inst);
        let mut order = Vec::new();
        while !st.all_bound() {
            let var = max_regret(&st).unwrap();
            let value = MinCostValues.order_values(&st, var)[0];
            order.push((var, value));
            assert_eq!(st.propagate(var, value), crate::state::Propagation::Consistent);
        }
        assert_eq!(order, vec![(2, 2), (1, 1), (0, 3), (3, 0)]);
        assert_eq!(st.partial_cost(), 13.0);
    }
}
