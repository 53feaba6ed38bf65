//! Mutable search state: current domains, bindings, a pruning trail, and the
//! running cost of fully-bound constraints.
//!
//! Domains are bitmasks over each variable's original domain positions. Every
//! [`SearchState::propagate`] call opens one undo level; [`SearchState::undo`]
//! restores the previous domains bit for bit. Propagation enforces arc
//! consistency: a worklist revisits constraints whose scope domains shrank
//! until no unsupported value remains or some domain wipes out.

use std::collections::VecDeque;

use crate::instance::{Assignment, CopInstance, Value};

/// Outcome of binding a value and forward-checking its neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagation {
    Consistent,
    Wipeout,
}

#[derive(Debug, Clone, Copy)]
enum TrailEntry {
    Prune { var: u32, pos: u8 },
    Bind { var: u32 },
}

#[derive(Debug, Clone, Copy)]
struct LevelMark {
    trail_len: usize,
    partial_cost: f64,
}

#[derive(Debug, Clone)]
pub struct SearchState<'a> {
    instance: &'a CopInstance,
    domains: Vec<u64>,
    bound: Vec<Option<Value>>,
    bound_count: usize,
    ctr_unbound: Vec<u32>,
    partial_cost: f64,
    trail: Vec<TrailEntry>,
    levels: Vec<LevelMark>,
    // Worklist scratch, reused across propagate calls.
    queue: VecDeque<u32>,
    queued: Vec<bool>,
}

impl<'a> SearchState<'a> {
    pub fn new(instance: &'a CopInstance) -> Self {
        let domains = instance
            .domains()
            .iter()
            .map(|dom| if dom.len() == 64 { u64::MAX } else { (1u64 << dom.len()) - 1 })
            .collect();
        let ctr_unbound: Vec<u32> =
            instance.constraints().iter().map(|c| c.arity() as u32).collect();
        Self {
            instance,
            domains,
            bound: vec![None; instance.num_variables()],
            bound_count: 0,
            queued: vec![false; ctr_unbound.len()],
            ctr_unbound,
            partial_cost: 0.0,
            trail: Vec::new(),
            levels: Vec::new(),
            queue: VecDeque::new(),
        }
    }

    pub fn instance(&self) -> &'a CopInstance {
        self.instance
    }

    pub fn num_variables(&self) -> usize {
        self.bound.len()
    }

    pub fn is_bound(&self, var: usize) -> bool {
        self.bound[var].is_some()
    }

    pub fn bound_value(&self, var: usize) -> Option<Value> {
        self.bound[var]
    }

    pub fn bound_count(&self) -> usize {
        self.bound_count
    }

    pub fn all_bound(&self) -> bool {
        self.bound_count == self.bound.len()
    }

    pub fn unbound_vars(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.bound.len()).filter(move |&v| self.bound[v].is_none())
    }

    pub fn domain_size(&self, var: usize) -> usize {
        self.domains[var].count_ones() as usize
    }

    /// Values still admissible for `var`, in ascending original-domain order.
    pub fn domain_values(&self, var: usize) -> impl Iterator<Item = Value> + '_ {
        let dom = self.instance.domain(var);
        let mask = self.domains[var];
        (0..dom.len()).filter(move |&p| mask & (1 << p) != 0).map(move |p| dom[p])
    }

    pub fn contains(&self, var: usize, value: Value) -> bool {
        match self.instance.value_position(var, value) {
            Some(p) => self.domains[var] & (1 << p) != 0,
            None => false,
        }
    }

    /// Sum of selected tuple weights over fully-bound constraints.
    pub fn partial_cost(&self) -> f64 {
        self.partial_cost
    }

    /// Product of unbound variables' current domain sizes (the search-space
    /// proxy used by impact statistics).
    pub fn domain_product(&self) -> f64 {
        self.unbound_vars().map(|v| self.domain_size(v) as f64).product()
    }

    /// Number of undo levels currently open.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Snapshot of the current bindings.
    pub fn assignment(&self) -> Assignment {
        Assignment::from_values(self.bound.clone())
    }

    /// Raw domain bitmasks; exposed for exact restore checks in tests.
    pub fn domain_bits(&self) -> &[u64] {
        &self.domains
    }

    fn prune(&mut self, var: usize, pos: usize) {
        self.domains[var] &= !(1 << pos);
        self.trail.push(TrailEntry::Prune { var: var as u32, pos: pos as u8 });
    }

    /// Binds `var := value` and propagates to the arc-consistent fixpoint:
    /// starting from the constraints on `var`, values with no supporting
    /// tuple (consistent with the bindings and with every other scope
    /// domain) are pruned, and constraints touching a pruned variable are
    /// revisited. Opens one undo level regardless of the outcome; returns
    /// `Wipeout` when a domain empties or a newly fully-bound constraint has
    /// no permitted tuple.
    pub fn propagate(&mut self, var: usize, value: Value) -> Propagation {
        debug_assert!(self.bound[var].is_none(), "variable {var} already bound");
        debug_assert!(self.contains(var, value), "value {value} not in current domain of {var}");
        self.levels.push(LevelMark { trail_len: self.trail.len(), partial_cost: self.partial_cost });

        // Reduce var's own domain to the singleton.
        let keep = self.instance.value_position(var, value).expect("value in original domain");
        let mask = self.domains[var];
        for pos in 0..self.instance.domain(var).len() {
            if pos != keep && mask & (1 << pos) != 0 {
                self.prune(var, pos);
            }
        }
        self.bound[var] = Some(value);
        self.bound_count += 1;
        self.trail.push(TrailEntry::Bind { var: var as u32 });

        // The decrement loop must always run to completion: `undo` reverses
        // the counters for every constraint of `var`, wipeout or not.
        let mut wiped = false;
        debug_assert!(self.queue.is_empty());
        for &cj in self.instance.constraints_of(var) {
            let cj = cj as usize;
            self.ctr_unbound[cj] -= 1;
            if self.ctr_unbound[cj] == 0 {
                // Fully bound: charge the selected tuple, or fail if forbidden.
                let ctr = self.instance.constraint(cj);
                let tuple: Vec<Value> =
                    ctr.scope().iter().map(|&v| self.bound[v].expect("scope bound")).collect();
                match ctr.weight(&tuple) {
                    Some(w) => self.partial_cost += w,
                    None => wiped = true,
                }
            } else if !self.queued[cj] {
                self.queued[cj] = true;
                self.queue.push_back(cj as u32);
            }
        }

        while let Some(cj) = self.queue.pop_front() {
            let cj = cj as usize;
            self.queued[cj] = false;
            if wiped {
                continue;
            }
            if self.revise(cj) {
                wiped = true;
            }
        }

        if wiped {
            Propagation::Wipeout
        } else {
            Propagation::Consistent
        }
    }

    /// One support pass over a constraint's relation: collects, per unbound
    /// scope variable, the values some fully-admissible tuple supports, then
    /// prunes the rest. Pruned variables re-enqueue their other constraints.
    /// Returns true on wipeout.
    fn revise(&mut self, cj: usize) -> bool {
        let ctr = self.instance.constraint(cj);
        let scope = ctr.scope();
        let mut support = [0u64; crate::instance::MAX_ARITY];
        'rows: for (key, _) in ctr.rows() {
            let mut row_support = [0u64; crate::instance::MAX_ARITY];
            for (p, &sv) in scope.iter().enumerate() {
                let tv = ((key >> (16 * p)) & 0xffff) as Value;
                match self.bound[sv] {
                    Some(b) => {
                        if b != tv {
                            continue 'rows;
                        }
                    }
                    None => match self.instance.value_position(sv, tv) {
                        Some(pos) if self.domains[sv] & (1 << pos) != 0 => {
                            row_support[p] = 1 << pos;
                        }
                        _ => continue 'rows,
                    },
                }
            }
            for p in 0..scope.len() {
                support[p] |= row_support[p];
            }
        }
        for (p, &sv) in scope.iter().enumerate() {
            if self.bound[sv].is_some() {
                continue;
            }
            let unsupported = self.domains[sv] & !support[p];
            if unsupported == 0 {
                continue;
            }
            let mut bits = unsupported;
            while bits != 0 {
                let pos = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                self.prune(sv, pos);
            }
            if self.domains[sv] == 0 {
                return true;
            }
            for &ck in self.instance.constraints_of(sv) {
                let ck = ck as usize;
                if self.ctr_unbound[ck] > 0 && !self.queued[ck] {
                    self.queued[ck] = true;
                    self.queue.push_back(ck as u32);
                }
            }
        }
        false
    }

    /// Rewinds the most recent [`propagate`](Self::propagate) level.
    pub fn undo(&mut self) {
        let mark = self.levels.pop().expect("undo without an open level");
        while self.trail.len() > mark.trail_len {
            match self.trail.pop().unwrap() {
                TrailEntry::Prune { var, pos } => {
                    self.domains[var as usize] |= 1 << pos;
                }
                TrailEntry::Bind { var } => {
                    self.bound[var as usize] = None;
                    self.bound_count -= 1;
                    for &cj in self.instance.constraints_of(var as usize) {
                        self.ctr_unbound[cj as usize] += 1;
                    }
                }
            }
        }
        self.partial_cost = mark.partial_cost;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{evaluate_objective, fixtures, Objective};
    use crate::rb::{rb_generate, RbParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binding_prunes_unsupported_neighbor_values() {
        let inst = fixtures::two_var_pair();
        let mut st = SearchState::new(&inst);
        assert_eq!(st.propagate(0, 0), Propagation::Consistent);
        assert_eq!(st.domain_values(1).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn binding_without_support_wipes_out() {
        let inst = fixtures::two_var_pair();
        let mut st = SearchState::new(&inst);
        assert_eq!(st.propagate(0, 1), Propagation::Wipeout);
        st.undo();
        assert_eq!(st.domain_size(1), 2);
    }

    #[test]
    fn last_consistent_binding_leaves_singletons() {
        let inst = fixtures::two_var_pair();
        let mut st = SearchState::new(&inst);
        assert_eq!(st.propagate(0, 2), Propagation::Consistent);
        assert_eq!(st.propagate(1, 1), Propagation::Consistent);
        assert!(st.all_bound());
        assert!((0..2).all(|v| st.domain_size(v) == 1));
        assert_eq!(st.partial_cost(), 2.0);
    }

    #[test]
    fn partial_cost_matches_objective_on_complete_states() {
        let inst = fixtures::task_assignment();
        let mut st = SearchState::new(&inst);
        for (var, val) in [(0, 3), (1, 1), (2, 2), (3, 0)] {
            assert_eq!(st.propagate(var, val), Propagation::Consistent);
        }
        let obj = evaluate_objective(&inst, &st.assignment()).unwrap();
        assert_eq!(obj, Objective::Feasible(st.partial_cost()));
        assert_eq!(st.partial_cost(), 13.0);
    }

    #[test]
    fn violating_a_unary_table_is_detected() {
        // A unary constraint that forbids value 1 for variable 0.
        let ctr =
            crate::instance::ConstraintFunction::new(vec![0], vec![(vec![0], 1.0)]).unwrap();
        let inst = crate::instance::CopInstance::new(vec![vec![0, 1]], vec![ctr], 1, 1.0).unwrap();
        let mut st = SearchState::new(&inst);
        assert_eq!(st.propagate(0, 1), Propagation::Wipeout);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn trail_restores_domains_exactly(seed in 0u64..500, steps in 1usize..12) {
            let params = RbParams {
                arity: 2,
                num_variables: 8,
                domain_exponent: 0.6,
                density: 1.2,
                tightness: 0.3,
                weight_range: 3,
                seed,
            };
            let inst = rb_generate(&params).unwrap();
            let mut st = SearchState::new(&inst);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let mut snapshots: Vec<(Vec<u64>, f64, usize)> = Vec::new();
            for _ in 0..steps {
                let unbound: Vec<usize> = st.unbound_vars().collect();
                if unbound.is_empty() { break; }
                let var = unbound[rng.random_range(0..unbound.len())];
                let values: Vec<_> = st.domain_values(var).collect();
                let value = values[rng.random_range(0..values.len())];
                snapshots.push((st.domain_bits().to_vec(), st.partial_cost(), st.bound_count()));
                if st.propagate(var, value) == Propagation::Wipeout {
                    st.undo();
                    let (bits, cost, cnt) = snapshots.pop().unwrap();
                    prop_assert_eq!(st.domain_bits(), bits.as_slice());
                    prop_assert_eq!(st.partial_cost(), cost);
                    prop_assert_eq!(st.bound_count(), cnt);
                }
            }
            while let Some((bits, cost, cnt)) = snapshots.pop() {
                st.undo();
                prop_assert_eq!(st.domain_bits(), bits.as_slice());
                prop_assert_eq!(st.partial_cost(), cost);
                prop_assert_eq!(st.bound_count(), cnt);
            }
            prop_assert_eq!(st.depth(), 0);
        }

        #[test]
        fn partial_cost_never_decreases_down_a_path(seed in 0u64..200) {
            let params = RbParams {
                arity: 2,
                num_variables: 7,
                domain_exponent: 0.6,
                density: 1.0,
                tightness: 0.2,
                weight_range: 4,
                seed,
            };
            let inst = rb_generate(&params).unwrap();
            let mut st = SearchState::new(&inst);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut last = 0.0f64;
            loop {
                let unbound: Vec<usize> = st.unbound_vars().collect();
                if unbound.is_empty() { break; }
                let var = unbound[rng.random_range(0..unbound.len())];
                let values: Vec<_> = st.domain_values(var).collect();
                let value = values[rng.random_range(0..values.len())];
                if st.propagate(var, value) == Propagation::Wipeout { break; }
                prop_assert!(st.partial_cost() >= last);
                last = st.partial_cost();
            }
        }
    }
}
