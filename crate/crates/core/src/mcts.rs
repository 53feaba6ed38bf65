//! Tree search over interleaved variable/value nodes.
//!
//! The tree alternates variable nodes (an action: "branch on this variable
//! next") and value nodes (a binding applied through propagation). Selection
//! descends by a minimizing UCT variant over scorer values, expansion samples
//! one value for the chosen leaf variable and creates a variable child per
//! still-unbound variable, simulation completes the state by random bindings,
//! successful simulations are mirrored back into the tree with the last two
//! bindings swapped, and backup propagates `(success, objective)` statistics
//! up the walked path.

use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::instance::{Assignment, CopInstance, Value};
use crate::nn::{q_values_all, GraphTopology, ScorerParams, StateEncoding};
use crate::state::{Propagation, SearchState};

pub type NodeId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum MctsError {
    #[error("tree root has no actions")]
    DeadTree,
    #[error("expansion target is not an unexpanded variable node")]
    NotALeaf,
    #[error("variable {0} has an empty domain")]
    EmptyDomain(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    /// The empty-assignment state; behaves like a value node structurally.
    Root,
    /// Action node: `var` chosen for branching, value not yet assigned.
    Variable { var: usize },
    /// State node: `var := value` applied through propagation.
    Value { var: usize, value: Value },
}

/// Terminal status of a value node, fixed at creation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    Solution { objective: f64 },
    Deadend,
}

#[derive(Debug, Clone)]
pub struct MctsNode {
    pub kind: NodeKind,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub visits: u64,
    pub successes: u64,
    /// Best objective of any solution backed up through this node.
    pub tau: f64,
    /// Steering bonus, raised by mirroring; subtracted in the selection score.
    pub alpha: f64,
    pub terminal: Option<Terminal>,
    /// True when the subtree is settled: terminal, or every child settled.
    /// Selection routes around exhausted subtrees so each descent can still
    /// produce new information; mirror insertions may clear the flag again.
    pub exhausted: bool,
    qcache: f64,
    qcache_version: u64,
}

impl MctsNode {
    fn new(kind: NodeKind, parent: Option<NodeId>, terminal: Option<Terminal>) -> Self {
        Self {
            kind,
            parent,
            children: Vec::new(),
            visits: 0,
            successes: 0,
            tau: f64::INFINITY,
            alpha: 0.0,
            exhausted: terminal.is_some(),
            terminal,
            qcache: 0.0,
            qcache_version: 0,
        }
    }

    /// Bare node for statistic-level tests.
    #[cfg(test)]
    pub(crate) fn new_for_tests() -> Self {
        Self::new(NodeKind::Variable { var: 0 }, None, None)
    }

    /// Empirical success rate; 0 before the first visit.
    pub fn success_rate(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.successes as f64 / self.visits as f64
        }
    }

    pub fn var(&self) -> Option<usize> {
        match self.kind {
            NodeKind::Variable { var } | NodeKind::Value { var, .. } => Some(var),
            NodeKind::Root => None,
        }
    }
}

/// Outcome of one playout (or of a terminal state revisit).
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub success: bool,
    pub solution: Option<Assignment>,
    pub objective: Option<f64>,
}

impl SimOutcome {
    pub fn failure() -> Self {
        Self { success: false, solution: None, objective: None }
    }
}

/// Exploration term of the selection rule: `sqrt(ln(total) / child)`.
pub fn exploration_bonus(total_visits: u64, child_visits: u64) -> f64 {
    ((total_visits as f64).ln() / child_visits as f64).sqrt()
}

/// Source of action scores during selection. The version stamps per-node
/// caches: scores are deterministic per (state, version), so a node's scores
/// are recomputed only after the source changes.
pub trait QSource {
    fn version(&self) -> u64;
    /// Scores for every unbound variable of `state`, ascending by variable.
    fn scores(&self, state: &SearchState) -> Vec<(usize, f64)>;
}

/// Scores every action with a fixed constant; selection then reduces to the
/// exploration and steering terms. Useful for tests and ablations.
pub struct ConstQ(pub f64);

impl QSource for ConstQ {
    fn version(&self) -> u64 {
        1
    }
    fn scores(&self, state: &SearchState) -> Vec<(usize, f64)> {
        state.unbound_vars().map(|v| (v, self.0)).collect()
    }
}

/// Scores actions with a Q-scorer snapshot.
pub struct ScorerQ<'a> {
    pub params: &'a ScorerParams,
    pub topo: Arc<GraphTopology>,
    pub version: u64,
}

impl QSource for ScorerQ<'_> {
    fn version(&self) -> u64 {
        self.version
    }
    fn scores(&self, state: &SearchState) -> Vec<(usize, f64)> {
        let enc = StateEncoding::from_state(state, Arc::clone(&self.topo));
        q_values_all(&enc, self.params).expect("scoring a state with unbound variables")
    }
}

/// Where a selection descent stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionKind {
    /// A variable node with no expanded value node: expand here.
    Leaf { node: NodeId },
    /// A terminal value node (solution or deadend) was re-reached.
    Terminal { node: NodeId },
}

pub struct Selection<'a> {
    pub path: Vec<NodeId>,
    pub state: SearchState<'a>,
    pub kind: SelectionKind,
}

/// Result of expanding a leaf variable node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpandOutcome {
    /// Consistent, more variables to bind; children were created.
    Open,
    /// The binding completed a feasible assignment.
    Solution { objective: f64 },
    /// Propagation wiped out.
    Deadend,
}

#[derive(Debug, Clone, Copy)]
pub struct Expansion {
    pub value_node: NodeId,
    pub value: Value,
    pub outcome: ExpandOutcome,
}

pub struct MctsTree {
    nodes: Vec<MctsNode>,
    root: NodeId,
}

impl MctsTree {
    /// Fresh tree over the empty assignment, with one variable child per
    /// instance variable.
    pub fn new(instance: &CopInstance) -> Self {
        let mut tree = Self { nodes: vec![MctsNode::new(NodeKind::Root, None, None)], root: 0 };
        for var in 0..instance.num_variables() {
            tree.add_node(NodeKind::Variable { var }, tree.root, None);
        }
        tree
    }

    fn add_node(&mut self, kind: NodeKind, parent: NodeId, terminal: Option<Terminal>) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(MctsNode::new(kind, Some(parent), terminal));
        self.nodes[parent as usize].children.push(id);
        id
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &MctsNode {
        &self.nodes[id as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find_var_child(&self, parent: NodeId, var: usize) -> Option<NodeId> {
        self.nodes[parent as usize]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c as usize].kind == NodeKind::Variable { var })
    }

    pub fn find_value_child(&self, parent: NodeId, value: Value) -> Option<NodeId> {
        self.nodes[parent as usize].children.iter().copied().find(|&c| {
            matches!(self.nodes[c as usize].kind, NodeKind::Value { value: v, .. } if v == value)
        })
    }

    /// Bindings along a root-to-node path, in order.
    pub fn bindings_along(&self, path: &[NodeId]) -> Vec<(usize, Value)> {
        path.iter()
            .filter_map(|&id| match self.nodes[id as usize].kind {
                NodeKind::Value { var, value } => Some((var, value)),
                _ => None,
            })
            .collect()
    }

    /// Descends from the root: at value nodes the scored minimizing rule picks
    /// the next variable (unvisited children first, ties by variable index);
    /// at variable nodes the least-visited value child is replayed through
    /// propagation. Stops at the first unexpanded variable node or at a
    /// terminal value node.
    pub fn select<'a>(
        &mut self,
        instance: &'a CopInstance,
        source: &dyn QSource,
        c1: f64,
    ) -> Result<Selection<'a>, MctsError> {
        if self.nodes[self.root as usize].children.is_empty() {
            return Err(MctsError::DeadTree);
        }
        let mut state = SearchState::new(instance);
        let mut path = vec![self.root];
        let mut current = self.root;
        loop {
            match self.nodes[current as usize].kind {
                NodeKind::Root | NodeKind::Value { .. } => {
                    if self.nodes[current as usize].terminal.is_some() {
                        return Ok(Selection { path, state, kind: SelectionKind::Terminal { node: current } });
                    }
                    let next = self.pick_variable_child(current, &state, source, c1);
                    path.push(next);
                    current = next;
                }
                NodeKind::Variable { .. } => {
                    if self.nodes[current as usize].children.is_empty() {
                        return Ok(Selection { path, state, kind: SelectionKind::Leaf { node: current } });
                    }
                    let next = self.pick_value_child(current);
                    let (var, value) = match self.nodes[next as usize].kind {
                        NodeKind::Value { var, value } => (var, value),
                        _ => unreachable!("variable node children are value nodes"),
                    };
                    path.push(next);
                    let outcome = state.propagate(var, value);
                    current = next;
                    if outcome == Propagation::Wipeout {
                        debug_assert_eq!(
                            self.nodes[current as usize].terminal,
                            Some(Terminal::Deadend)
                        );
                        return Ok(Selection { path, state, kind: SelectionKind::Terminal { node: current } });
                    }
                }
            }
        }
    }

    fn pick_variable_child(
        &mut self,
        parent: NodeId,
        state: &SearchState,
        source: &dyn QSource,
        c1: f64,
    ) -> NodeId {
        let mut children = self.nodes[parent as usize].children.clone();
        debug_assert!(!children.is_empty());
        // Settled subtrees cannot yield anything new; skip them while fresh
        // ones remain.
        if children.iter().any(|&c| !self.nodes[c as usize].exhausted) {
            children.retain(|&c| !self.nodes[c as usize].exhausted);
        }
        // Unvisited children come first, in stored (ascending variable) order.
        if let Some(&fresh) = children.iter().find(|&&c| self.nodes[c as usize].visits == 0) {
            return fresh;
        }
        let version = source.version();
        if children.iter().any(|&c| self.nodes[c as usize].qcache_version != version) {
            let scores: FxHashMap<usize, f64> = source.scores(state).into_iter().collect();
            for &c in &children {
                let var = self.nodes[c as usize].var().expect("variable child");
                let q = *scores.get(&var).expect("score for every unbound variable");
                let node = &mut self.nodes[c as usize];
                node.qcache = q;
                node.qcache_version = version;
            }
        }
        let total: u64 = children.iter().map(|&c| self.nodes[c as usize].visits).sum();
        let mut best: Option<(f64, usize, NodeId)> = None;
        for &c in &children {
            let node = &self.nodes[c as usize];
            let var = node.var().expect("variable child");
            let score = node.qcache - c1 * exploration_bonus(total, node.visits) - node.alpha;
            let better = match best {
                Some((bs, bv, _)) => score < bs || (score == bs && var < bv),
                None => true,
            };
            if better {
                best = Some((score, var, c));
            }
        }
        best.expect("non-empty children").2
    }

    fn pick_value_child(&self, parent: NodeId) -> NodeId {
        let children = &self.nodes[parent as usize].children;
        let mut pool: Vec<NodeId> =
            children.iter().copied().filter(|&c| !self.nodes[c as usize].exhausted).collect();
        if pool.is_empty() {
            pool = children.clone();
        }
        let mut best = pool[0];
        for &c in &pool[1..] {
            if self.nodes[c as usize].visits < self.nodes[best as usize].visits {
                best = c;
            }
        }
        best
    }

    fn settled(&self, id: NodeId) -> bool {
        let node = &self.nodes[id as usize];
        match node.kind {
            NodeKind::Variable { .. } => {
                !node.children.is_empty()
                    && node.children.iter().all(|&c| self.nodes[c as usize].exhausted)
            }
            NodeKind::Root | NodeKind::Value { .. } => {
                node.terminal.is_some()
                    || (!node.children.is_empty()
                        && node.children.iter().all(|&c| self.nodes[c as usize].exhausted))
            }
        }
    }

    /// Recomputes the settled flag from `from` up to the root. A variable
    /// node settles when all its expanded value children settle; a value node
    /// settles when terminal or when every variable child settles. Inserting
    /// fresh nodes can clear flags along the chain.
    fn refresh_exhausted(&mut self, from: NodeId) {
        let mut current = Some(from);
        while let Some(id) = current {
            self.nodes[id as usize].exhausted = self.settled(id);
            current = self.nodes[id as usize].parent;
        }
    }

    /// Creates a value node under `parent` for the already-propagated state,
    /// plus one variable child per still-unbound variable when open.
    fn create_value_node(
        &mut self,
        parent: NodeId,
        var: usize,
        value: Value,
        state: &SearchState,
        wiped: bool,
    ) -> (NodeId, ExpandOutcome) {
        let (terminal, outcome) = if wiped {
            (Some(Terminal::Deadend), ExpandOutcome::Deadend)
        } else if state.all_bound() {
            let objective = state.partial_cost();
            (Some(Terminal::Solution { objective }), ExpandOutcome::Solution { objective })
        } else {
            (None, ExpandOutcome::Open)
        };
        let id = self.add_node(NodeKind::Value { var, value }, parent, terminal);
        if outcome == ExpandOutcome::Open {
            let unbound: Vec<usize> = state.unbound_vars().collect();
            for v in unbound {
                self.add_node(NodeKind::Variable { var: v }, id, None);
            }
        }
        (id, outcome)
    }

    /// Samples one value for the leaf's variable uniformly from its current
    /// domain, applies it to `state`, and installs the value node (with its
    /// variable children when the state stays open).
    pub fn expand(
        &mut self,
        leaf: NodeId,
        state: &mut SearchState,
        rng: &mut impl Rng,
    ) -> Result<Expansion, MctsError> {
        let var = match self.nodes[leaf as usize].kind {
            NodeKind::Variable { var } if self.nodes[leaf as usize].children.is_empty() => var,
            _ => return Err(MctsError::NotALeaf),
        };
        let values: Vec<Value> = state.domain_values(var).collect();
        if values.is_empty() {
            return Err(MctsError::EmptyDomain(var));
        }
        let value = values[rng.random_range(0..values.len())];
        let wiped = state.propagate(var, value) == Propagation::Wipeout;
        let (value_node, outcome) = self.create_value_node(leaf, var, value, state, wiped);
        self.refresh_exhausted(value_node);
        Ok(Expansion { value_node, value, outcome })
    }

    /// Adds one visit (and, on success, the outcome objective) to every node
    /// on the path.
    pub fn backup(&mut self, path: &[NodeId], outcome: &SimOutcome) {
        for &id in path {
            let node = &mut self.nodes[id as usize];
            node.visits += 1;
            if outcome.success {
                node.successes += 1;
                if let Some(obj) = outcome.objective {
                    if obj < node.tau {
                        node.tau = obj;
                    }
                }
            }
        }
    }

    /// Re-inserts `solution` with its last two bindings swapped. Walking the
    /// mirrored order, missing nodes are created (a structural expansion of
    /// the permuted path); nodes that already exist have their steering bonus
    /// raised, which ratchets selection toward solution-bearing corridors.
    pub fn mirror(
        &mut self,
        instance: &CopInstance,
        solution: &[(usize, Value)],
        alpha_step: f64,
    ) {
        if solution.len() < 2 {
            return;
        }
        let mut order = solution.to_vec();
        let len = order.len();
        order.swap(len - 2, len - 1);

        let mut state = SearchState::new(instance);
        let mut current = self.root;
        for &(var, value) in &order {
            let var_child = self
                .find_var_child(current, var)
                .expect("value nodes carry a child per unbound variable");
            self.nodes[var_child as usize].alpha += alpha_step;
            let outcome = state.propagate(var, value);
            debug_assert_eq!(
                outcome,
                Propagation::Consistent,
                "a permuted feasible solution replays without wipeout"
            );
            current = match self.find_value_child(var_child, value) {
                Some(existing) => {
                    self.nodes[existing as usize].alpha += alpha_step;
                    existing
                }
                None => self.create_value_node(var_child, var, value, &state, false).0,
            };
        }
        self.refresh_exhausted(current);
    }

    /// Structural consistency: node kinds alternate, success counts stay
    /// within visit counts, children visits add up to their parent's, and
    /// every node's best objective is the minimum over its children's.
    pub fn validate_structure(&self) -> Result<(), String> {
        for (idx, node) in self.nodes.iter().enumerate() {
            let id = idx as NodeId;
            if node.successes > node.visits {
                return Err(format!("node {id}: successes {} > visits {}", node.successes, node.visits));
            }
            let rate = node.success_rate();
            if !(0.0..=1.0).contains(&rate) {
                return Err(format!("node {id}: success rate {rate} outside [0,1]"));
            }
            for &c in &node.children {
                let child = &self.nodes[c as usize];
                let ok = match node.kind {
                    NodeKind::Root | NodeKind::Value { .. } => {
                        matches!(child.kind, NodeKind::Variable { .. })
                    }
                    NodeKind::Variable { var } => {
                        matches!(child.kind, NodeKind::Value { var: v, .. } if v == var)
                    }
                };
                if !ok {
                    return Err(format!("node {id}: child {c} breaks kind alternation"));
                }
                if child.parent != Some(id) {
                    return Err(format!("node {id}: child {c} has wrong parent link"));
                }
            }
            if node.exhausted != self.settled(id) {
                return Err(format!("node {id}: stale exhausted flag"));
            }
            if !node.children.is_empty() {
                // Every visit of a root/value node descends into a child.
                // Variable nodes also absorb visits for playouts initiated at
                // them, so their children may sum to less.
                let child_sum: u64 =
                    node.children.iter().map(|&c| self.nodes[c as usize].visits).sum();
                let conserved = match node.kind {
                    NodeKind::Root | NodeKind::Value { .. } => child_sum == node.visits,
                    NodeKind::Variable { .. } => child_sum <= node.visits,
                };
                if !conserved {
                    return Err(format!(
                        "node {id}: children visits {child_sum} vs own visits {}",
                        node.visits
                    ));
                }
                // Same asymmetry for objectives: root/value nodes learn every
                // solution through a child, variable nodes may know better
                // objectives from playouts initiated at them.
                let child_tau = node
                    .children
                    .iter()
                    .map(|&c| self.nodes[c as usize].tau)
                    .fold(f64::INFINITY, f64::min);
                if child_tau.is_finite() {
                    let ok = match node.kind {
                        NodeKind::Root | NodeKind::Value { .. } => node.tau == child_tau,
                        NodeKind::Variable { .. } => node.tau <= child_tau,
                    };
                    if !ok {
                        return Err(format!(
                            "node {id}: tau {} vs min child tau {child_tau}",
                            node.tau
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Deep consistency: replays every tree path, checking that value nodes
    /// propagate as their terminal markers claim and that solution objectives
    /// match the replayed cost.
    pub fn validate_replay(&self, instance: &CopInstance) -> Result<(), String> {
        fn walk(
            tree: &MctsTree,
            id: NodeId,
            state: &mut SearchState,
        ) -> Result<(), String> {
            let node = &tree.nodes[id as usize];
            let mut undo = false;
            if let NodeKind::Value { var, value } = node.kind {
                if !state.contains(var, value) {
                    return Err(format!("node {id}: value pruned before replay"));
                }
                let outcome = state.propagate(var, value);
                undo = true;
                match (outcome, node.terminal) {
                    (Propagation::Wipeout, Some(Terminal::Deadend)) => {
                        state.undo();
                        return Ok(());
                    }
                    (Propagation::Wipeout, other) => {
                        state.undo();
                        return Err(format!("node {id}: wipeout but marked {other:?}"));
                    }
                    (Propagation::Consistent, Some(Terminal::Deadend)) => {
                        state.undo();
                        return Err(format!("node {id}: deadend marker but consistent"));
                    }
                    (Propagation::Consistent, Some(Terminal::Solution { objective })) => {
                        let ok = state.all_bound() && state.partial_cost() == objective;
                        state.undo();
                        return if ok {
                            Ok(())
                        } else {
                            Err(format!("node {id}: solution marker mismatch"))
                        };
                    }
                    (Propagation::Consistent, None) => {
                        if state.all_bound() {
                            state.undo();
                            return Err(format!("node {id}: complete state without marker"));
                        }
                    }
                }
            }
            for &c in &node.children {
                if let Err(e) = walk(tree, c, state) {
                    if undo {
                        state.undo();
                    }
                    return Err(e);
                }
            }
            if undo {
                state.undo();
            }
            Ok(())
        }
        let mut state = SearchState::new(instance);
        walk(self, self.root, &mut state)?;
        self.validate_structure()
    }

    /// Writes one line per node: id, kind, depth, visits, success rate, best
    /// objective, steering bonus.
    pub fn dump_stats(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "node kind depth visits rate tau alpha")?;
        let mut depth = vec![0u32; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(p) = node.parent {
                depth[idx] = depth[p as usize] + 1;
            }
            let kind = match node.kind {
                NodeKind::Root => "root".to_string(),
                NodeKind::Variable { var } => format!("var:{var}"),
                NodeKind::Value { var, value } => format!("val:{var}={value}"),
            };
            writeln!(
                w,
                "{idx} {kind} {} {} {} {} {}",
                depth[idx],
                node.visits,
                node.success_rate(),
                node.tau,
                node.alpha
            )?;
        }
        Ok(())
    }
}

/// How playouts pick the next variable. Values are always drawn uniformly
/// from the current domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlayoutPolicy {
    /// Uniform-random variable order.
    Random,
    /// Domain over tightness-weighted degree. A guided dive completes often
    /// enough that a handful of playouts yield an informative success rate
    /// even at shallow states, where random completion almost never does.
    Guided,
}

/// Completes the state by uniform-random variable and value choices under
/// propagation. Returns the outcome together with the binding order the
/// playout used; the state is rewound to its entry depth before returning.
pub fn simulate(
    state: &mut SearchState,
    rng: &mut impl Rng,
) -> (SimOutcome, Vec<(usize, Value)>) {
    run_playout(state, rng, PlayoutPolicy::Random)
}

/// [`simulate`] with a selectable variable policy.
pub fn run_playout(
    state: &mut SearchState,
    rng: &mut impl Rng,
    policy: PlayoutPolicy,
) -> (SimOutcome, Vec<(usize, Value)>) {
    let entry_depth = state.depth();
    let mut order = Vec::new();
    let outcome = loop {
        if state.all_bound() {
            break SimOutcome {
                success: true,
                solution: Some(state.assignment()),
                objective: Some(state.partial_cost()),
            };
        }
        let var = match policy {
            PlayoutPolicy::Random => {
                let unbound: Vec<usize> = state.unbound_vars().collect();
                unbound[rng.random_range(0..unbound.len())]
            }
            PlayoutPolicy::Guided => {
                crate::heuristics::dom_tdeg(state).expect("unbound variable exists")
            }
        };
        let values: Vec<Value> = state.domain_values(var).collect();
        let value = values[rng.random_range(0..values.len())];
        order.push((var, value));
        if state.propagate(var, value) == Propagation::Wipeout {
            break SimOutcome::failure();
        }
    };
    while state.depth() > entry_depth {
        state.undo();
    }
    (outcome, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{evaluate_objective, fixtures, ConstraintFunction, CopInstance, Objective};
    use crate::rb::{rb_generate, RbParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scores from a fixed table; everything missing scores 0.
    struct TableQ {
        version: u64,
        table: Vec<(usize, f64)>,
    }

    impl QSource for TableQ {
        fn version(&self) -> u64 {
            self.version
        }
        fn scores(&self, state: &SearchState) -> Vec<(usize, f64)> {
            state
                .unbound_vars()
                .map(|v| {
                    let q = self
                        .table
                        .iter()
                        .find(|&&(tv, _)| tv == v)
                        .map_or(0.0, |&(_, q)| q);
                    (v, q)
                })
                .collect()
        }
    }

    #[test]
    fn exploration_bonus_matches_hand_value() {
        let u = exploration_bonus(10, 5);
        assert!((u - (10f64.ln() / 5.0).sqrt()).abs() < 1e-12);
        assert!((u - 0.6786).abs() < 1e-4);
    }

    #[test]
    fn unvisited_children_are_selected_first() {
        let inst = fixtures::task_assignment();
        let mut tree = MctsTree::new(&inst);
        let sel = tree.select(&inst, &ConstQ(0.0), 1.0).unwrap();
        // Fresh tree: variable 0's node is the first unvisited child.
        match sel.kind {
            SelectionKind::Leaf { node } => {
                assert_eq!(tree.node(node).kind, NodeKind::Variable { var: 0 });
            }
            other => panic!("expected leaf, got {other:?}"),
        }
    }

    #[test]
    fn greedy_selection_with_zero_exploration_follows_q() {
        let inst = fixtures::task_assignment();
        let mut tree = MctsTree::new(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Visit every root child once so the argmin rule is in play.
        for _ in 0..4 {
            let sel = tree.select(&inst, &ConstQ(0.0), 1.0).unwrap();
            let (node, mut state, path) = match sel.kind {
                SelectionKind::Leaf { node } => (node, sel.state, sel.path),
                _ => panic!("fresh leaves expected"),
            };
            let exp = tree.expand(node, &mut state, &mut rng).unwrap();
            let mut path = path;
            path.push(exp.value_node);
            tree.backup(&path, &SimOutcome::failure());
        }
        // Now q-greedy: variable 2 has the smallest score.
        let q = TableQ { version: 7, table: vec![(0, 0.9), (1, 0.5), (2, -0.3), (3, 0.4)] };
        let sel = tree.select(&inst, &q, 0.0).unwrap();
        let descended = sel.path[1];
        assert_eq!(tree.node(descended).kind, NodeKind::Variable { var: 2 });
    }

    #[test]
    fn raising_alpha_steers_selection() {
        let inst = fixtures::task_assignment();
        let mut tree = MctsTree::new(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..4 {
            let sel = tree.select(&inst, &ConstQ(0.0), 1.0).unwrap();
            let (node, mut state, mut path) = match sel.kind {
                SelectionKind::Leaf { node } => (node, sel.state, sel.path),
                _ => panic!(),
            };
            let exp = tree.expand(node, &mut state, &mut rng).unwrap();
            path.push(exp.value_node);
            tree.backup(&path, &SimOutcome::failure());
        }
        // All q equal and visits equal: bumping one child's alpha wins the argmin.
        let target = tree.find_var_child(tree.root(), 3).unwrap();
        {
            let node = &mut tree.nodes[target as usize];
            node.alpha += 0.5;
        }
        let sel = tree.select(&inst, &ConstQ(0.0), 1.0).unwrap();
        assert_eq!(sel.path[1], target);
    }

    #[test]
    fn expansion_creates_one_child_per_unbound_variable() {
        let inst = fixtures::task_assignment();
        let mut tree = MctsTree::new(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sel = tree.select(&inst, &ConstQ(0.0), 1.0).unwrap();
        let (node, mut state) = match sel.kind {
            SelectionKind::Leaf { node } => (node, sel.state),
            _ => panic!(),
        };
        let exp = tree.expand(node, &mut state, &mut rng).unwrap();
        assert_eq!(exp.outcome, ExpandOutcome::Open);
        assert_eq!(tree.node(exp.value_node).children.len(), 3);
        assert!(matches!(
            tree.expand(node, &mut state, &mut rng),
            Err(MctsError::NotALeaf)
        ));
    }

    #[test]
    fn expanding_the_last_variable_terminates() {
        let ctr = ConstraintFunction::new(vec![0], vec![(vec![0], 2.0)]).unwrap();
        let inst = CopInstance::new(vec![vec![0]], vec![ctr], 1, 2.0).unwrap();
        let mut tree = MctsTree::new(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sel = tree.select(&inst, &ConstQ(0.0), 1.0).unwrap();
        let (node, mut state) = match sel.kind {
            SelectionKind::Leaf { node } => (node, sel.state),
            _ => panic!(),
        };
        let exp = tree.expand(node, &mut state, &mut rng).unwrap();
        assert_eq!(exp.outcome, ExpandOutcome::Solution { objective: 2.0 });
        assert!(tree.node(exp.value_node).children.is_empty());
    }

    #[test]
    fn wipeout_expansion_records_a_deadend() {
        let inst = fixtures::two_var_pair();
        let mut tree = MctsTree::new(&inst);
        // Descend into variable 0 and expand with a seed that draws value 1
        // (unsupported by the only constraint).
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        loop {
            let sel = tree.select(&inst, &ConstQ(0.0), 1.0).unwrap();
            match sel.kind {
                SelectionKind::Leaf { node } => {
                    let mut state = sel.state;
                    let exp = tree.expand(node, &mut state, &mut rng).unwrap();
                    if exp.outcome == ExpandOutcome::Deadend {
                        assert_eq!(tree.node(exp.value_node).terminal, Some(Terminal::Deadend));
                        assert!(tree.node(exp.value_node).children.is_empty());
                        return;
                    }
                    let mut path = sel.path;
                    path.push(exp.value_node);
                    tree.backup(&path, &SimOutcome::failure());
                }
                SelectionKind::Terminal { .. } => {
                    // Keep drawing; the deadend value shows up quickly.
                }
            }
        }
    }

    #[test]
    fn simulation_succeeds_immediately_on_complete_states() {
        let inst = fixtures::task_assignment();
        let mut state = SearchState::new(&inst);
        for (var, val) in [(0, 3), (1, 1), (2, 2), (3, 0)] {
            state.propagate(var, val);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (outcome, order) = simulate(&mut state, &mut rng);
        assert!(outcome.success);
        assert_eq!(outcome.objective, Some(13.0));
        assert!(order.is_empty());
    }

    #[test]
    fn zero_tightness_simulations_always_succeed() {
        let params = RbParams {
            arity: 2,
            num_variables: 8,
            domain_exponent: 0.7,
            density: 1.5,
            tightness: 0.0,
            weight_range: 3,
            seed: 6,
        };
        let inst = rb_generate(&params).unwrap();
        let mut state = SearchState::new(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (outcome, _) = simulate(&mut state, &mut rng);
            assert!(outcome.success);
            let obj = evaluate_objective(&inst, &outcome.solution.unwrap()).unwrap();
            assert_eq!(obj, Objective::Feasible(outcome.objective.unwrap()));
        }
        assert_eq!(state.depth(), 0);
    }

    #[test]
    fn simulation_success_rate_matches_exact_process_probability() {
        // Exact success probability of the random playout, by recursion over
        // the same propagation dynamics.
        fn success_prob(state: &mut SearchState) -> f64 {
            if state.all_bound() {
                return 1.0;
            }
            let unbound: Vec<usize> = state.unbound_vars().collect();
            let mut acc = 0.0;
            for &var in &unbound {
                let values: Vec<Value> = state.domain_values(var).collect();
                let mut var_acc = 0.0;
                for &value in &values {
                    match state.propagate(var, value) {
                        Propagation::Consistent => var_acc += success_prob(state),
                        Propagation::Wipeout => {}
                    }
                    state.undo();
                }
                acc += var_acc / values.len() as f64;
            }
            acc / unbound.len() as f64
        }

        let params = RbParams {
            arity: 2,
            num_variables: 5,
            domain_exponent: 0.65,
            density: 0.9,
            tightness: 0.35,
            weight_range: 0,
            seed: 11,
        };
        let inst = rb_generate(&params).unwrap();
        let mut state = SearchState::new(&inst);
        let p = success_prob(&mut state);
        assert!(p > 0.01 && p < 0.99, "want a non-degenerate instance, got p={p}");

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trials = 10_000;
        let mut hits = 0u32;
        for _ in 0..trials {
            if simulate(&mut state, &mut rng).0.success {
                hits += 1;
            }
        }
        let observed = hits as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            (observed - p).abs() <= 3.0 * sigma,
            "observed {observed}, exact {p}, sigma {sigma}"
        );
    }

    fn run_iterations(inst: &CopInstance, iters: usize, seed: u64) -> (MctsTree, u64) {
        let mut tree = MctsTree::new(inst);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut solutions = 0u64;
        for _ in 0..iters {
            let sel = tree.select(inst, &ConstQ(0.0), 1.0).unwrap();
            let mut path = sel.path;
            let mut state = sel.state;
            match sel.kind {
                SelectionKind::Leaf { node } => {
                    let exp = tree.expand(node, &mut state, &mut rng).unwrap();
                    path.push(exp.value_node);
                    for _ in 0..4 {
                        match exp.outcome {
                            ExpandOutcome::Deadend => {
                                tree.backup(&path, &SimOutcome::failure());
                            }
                            ExpandOutcome::Solution { objective } => {
                                solutions += 1;
                                let order = tree.bindings_along(&path);
                                tree.mirror(inst, &order, 0.1);
                                tree.backup(
                                    &path,
                                    &SimOutcome {
                                        success: true,
                                        solution: Some(state.assignment()),
                                        objective: Some(objective),
                                    },
                                );
                            }
                            ExpandOutcome::Open => {
                                let (outcome, order) = simulate(&mut state, &mut rng);
                                let mut path = path.clone();
                                if let Some(&(first, _)) = order.first() {
                                    if let Some(child) =
                                        tree.find_var_child(*path.last().unwrap(), first)
                                    {
                                        path.push(child);
                                    }
                                }
                                if outcome.success {
                                    solutions += 1;
                                    let mut full = tree.bindings_along(&path);
                                    full.extend(order.iter().copied());
                                    tree.mirror(inst, &full, 0.1);
                                }
                                tree.backup(&path, &outcome);
                            }
                        }
                    }
                }
                SelectionKind::Terminal { node } => {
                    let outcome = match tree.node(node).terminal.unwrap() {
                        Terminal::Solution { objective } => {
                            solutions += 1;
                            SimOutcome {
                                success: true,
                                solution: Some(state.assignment()),
                                objective: Some(objective),
                            }
                        }
                        Terminal::Deadend => SimOutcome::failure(),
                    };
                    if outcome.success {
                        let order = tree.bindings_along(&path);
                        tree.mirror(inst, &order, 0.1);
                    }
                    tree.backup(&path, &outcome);
                }
            }
        }
        (tree, solutions)
    }

    #[test]
    fn repeated_iterations_keep_the_tree_consistent() {
        let params = RbParams {
            arity: 2,
            num_variables: 6,
            domain_exponent: 0.7,
            density: 1.0,
            tightness: 0.25,
            weight_range: 4,
            seed: 13,
        };
        let inst = rb_generate(&params).unwrap();
        let (tree, solutions) = run_iterations(&inst, 300, 14);
        assert!(solutions > 0, "instance should admit solutions");
        tree.validate_replay(&inst).unwrap();

        // Root visit conservation.
        let root = tree.node(tree.root());
        let child_sum: u64 = root.children.iter().map(|&c| tree.node(c).visits).sum();
        assert_eq!(child_sum, root.visits);
    }

    #[test]
    fn backup_statistics_follow_the_narrated_example() {
        let inst = fixtures::two_var_pair();
        let mut tree = MctsTree::new(&inst);
        let var0 = tree.find_var_child(tree.root(), 0).unwrap();
        // Two value children under variable 0 with objectives 2 and 1.
        let mut state = SearchState::new(&inst);
        state.propagate(0, 0);
        let (val_a, _) = tree.create_value_node(var0, 0, 0, &state, false);
        state.undo();
        state.propagate(0, 2);
        let (val_c, _) = tree.create_value_node(var0, 0, 2, &state, false);
        state.undo();

        let success = |obj: f64| SimOutcome {
            success: true,
            solution: None,
            objective: Some(obj),
        };
        // Five playouts through var0: three successes (objectives 2, 2, 1).
        let root = tree.root();
        let a1 = tree.find_var_child(val_a, 1).unwrap();
        let c1 = tree.find_var_child(val_c, 1).unwrap();
        tree.backup(&[root, var0, val_a, a1], &success(2.0));
        tree.backup(&[root, var0, val_a, a1], &success(2.0));
        tree.backup(&[root, var0, val_c, c1], &success(1.0));
        tree.backup(&[root, var0, val_c, c1], &SimOutcome::failure());
        tree.backup(&[root, var0, val_a, a1], &SimOutcome::failure());

        let node = tree.node(var0);
        assert_eq!(node.visits, 5);
        assert_eq!(node.successes, 3);
        assert!((node.success_rate() - 0.6).abs() < 1e-12);
        assert_eq!(tree.node(val_a).tau, 2.0);
        assert_eq!(tree.node(val_c).tau, 1.0);
        // The variable node holds the minimum of its children's objectives.
        assert_eq!(node.tau, 1.0);
        tree.validate_structure().unwrap();

        // Failures never move tau.
        tree.backup(&[var0, val_c], &SimOutcome::failure());
        assert_eq!(tree.node(var0).tau, 1.0);
    }

    #[test]
    fn mirror_inserts_the_swapped_path() {
        let params = RbParams {
            arity: 2,
            num_variables: 4,
            domain_exponent: 0.8,
            density: 0.6,
            tightness: 0.0,
            weight_range: 2,
            seed: 21,
        };
        let inst = rb_generate(&params).unwrap();
        let mut state = SearchState::new(&inst);
        let mut solution = Vec::new();
        for v in 0..4 {
            let value = state.domain_values(v).next().unwrap();
            assert_eq!(state.propagate(v, value), Propagation::Consistent);
            solution.push((v, value));
        }

        let mut tree = MctsTree::new(&inst);
        tree.mirror(&inst, &solution, 0.1);
        // The mirrored order is (v0, v1, v3, v2): walk it.
        let mut expect = solution.clone();
        expect.swap(2, 3);
        let mut current = tree.root();
        for &(var, value) in &expect {
            let vc = tree.find_var_child(current, var).unwrap();
            current = tree.find_value_child(vc, value).unwrap();
        }
        assert!(matches!(tree.node(current).terminal, Some(Terminal::Solution { .. })));
        tree.validate_replay(&inst).unwrap();

        // The original (unswapped) tail must not have been created.
        let vc0 = tree.find_var_child(tree.root(), 0).unwrap();
        let val0 = tree.find_value_child(vc0, solution[0].1).unwrap();
        let vc1 = tree.find_var_child(val0, 1).unwrap();
        let val1 = tree.find_value_child(vc1, solution[1].1).unwrap();
        assert!(tree.find_var_child(val1, 2).is_some());
        let vc2 = tree.find_var_child(val1, 2).unwrap();
        assert!(tree.find_value_child(vc2, solution[2].1).is_none());

        // Walked nodes accumulate the steering bonus: one step from the
        // insertion walk, one more per repeat mirror of the same solution.
        let vc3 = tree.find_var_child(val1, 3).unwrap();
        let val3 = tree.find_value_child(vc3, solution[3].1).unwrap();
        let final_var = tree.find_var_child(val3, 2).unwrap();
        assert!((tree.node(final_var).alpha - 0.1).abs() < 1e-12);
        tree.mirror(&inst, &solution, 0.1);
        assert!((tree.node(final_var).alpha - 0.2).abs() < 1e-12);
        tree.mirror(&inst, &solution, 0.1);
        assert!((tree.node(final_var).alpha - 0.3).abs() < 1e-12);
        // The prefix ratchets too.
        assert!(tree.node(vc0).alpha >= 0.3);
    }

    #[test]
    fn short_solutions_do_not_mirror() {
        let ctr = ConstraintFunction::new(vec![0], vec![(vec![0], 0.0)]).unwrap();
        let inst = CopInstance::new(vec![vec![0, 1]], vec![ctr], 1, 0.0).unwrap();
        let mut tree = MctsTree::new(&inst);
        let before = tree.len();
        tree.mirror(&inst, &[(0, 0)], 0.1);
        assert_eq!(tree.len(), before);
    }

    #[test]
    fn stats_dump_lists_every_node() {
        let inst = fixtures::two_var_pair();
        let (tree, _) = {
            let mut tree = MctsTree::new(&inst);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let sel = tree.select(&inst, &ConstQ(0.0), 1.0).unwrap();
            if let SelectionKind::Leaf { node } = sel.kind {
                let mut state = sel.state;
                let _ = tree.expand(node, &mut state, &mut rng);
            }
            (tree, 0)
        };
        let mut buf = Vec::new();
        tree.dump_stats(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), tree.len() + 1);
        assert!(text.lines().next().unwrap().starts_with("node"));
    }
}
