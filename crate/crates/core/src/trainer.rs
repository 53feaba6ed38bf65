//! Training loop: drive tree search over a set of instances, turn node
//! statistics into regression targets, keep a replay buffer, update the
//! online scorer by gradient steps, and periodically copy it into the target
//! scorer used for action selection.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::instance::CopInstance;
use crate::mcts::{
    run_playout, ExpandOutcome, MctsError, MctsNode, MctsTree, NodeId, PlayoutPolicy, ScorerQ,
    SelectionKind, SimOutcome,
};
use crate::nn::{
    train_step, AdamState, BatchItem, GraphTopology, NnError, ScorerParams, StateEncoding,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no training instances")]
    NoInstances,
    #[error("target for an unvisited node")]
    UnvisitedNode,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mcts(#[from] MctsError),
}

/// Everything the training loop needs. Defaults are desk-scale: they train a
/// usable scorer on one core in minutes. `..Default::default()` keeps
/// experiments terse.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub rounds: usize,
    pub hidden: usize,
    /// Tree-search iterations per instance.
    pub t_max: u64,
    /// Playouts per expanded node.
    pub n_sim: u32,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Exploration coefficient of the selection rule.
    pub c1: f64,
    /// Objective-gap weight in the target.
    pub c3: f64,
    /// Failure-rate weight in the target.
    pub c4: f64,
    pub alpha_step: f64,
    /// Copy online -> target every this many gradient steps.
    pub target_sync_period: u64,
    pub sync_periodic: bool,
    /// Also copy online -> target after each instance.
    pub sync_per_instance: bool,
    pub learning_rate: f64,
    pub seed: u64,
    /// Emit a checkpoint event every this many gradient steps.
    pub checkpoint_every: Option<u64>,
    /// Variable policy for playouts; guided dives keep success statistics
    /// informative at small iteration budgets.
    pub playout: PlayoutPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: crate::nn::DEFAULT_EMBED_DIM,
            rounds: crate::nn::DEFAULT_ROUNDS,
            hidden: crate::nn::DEFAULT_HIDDEN,
            t_max: 500,
            n_sim: 10,
            buffer_capacity: 100_000,
            batch_size: 128,
            c1: 1.0,
            c3: 1.0,
            c4: 1.0,
            alpha_step: 0.1,
            target_sync_period: 10,
            sync_periodic: true,
            sync_per_instance: true,
            learning_rate: crate::nn::DEFAULT_LEARNING_RATE,
            seed: 0,
            checkpoint_every: None,
            playout: PlayoutPolicy::Guided,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |msg: &str| Err(TrainError::Config(msg.into()));
        if self.embed_dim == 0 || self.rounds == 0 || self.hidden == 0 {
            return err("scorer dimensions must be >= 1");
        }
        if self.t_max == 0 || self.n_sim == 0 || self.buffer_capacity == 0 || self.batch_size == 0
        {
            return err("iteration counts and sizes must be >= 1");
        }
        if self.target_sync_period == 0 {
            return err("target sync period must be >= 1");
        }
        if ![self.c1, self.c3, self.c4, self.alpha_step].iter().all(|c| c.is_finite()) {
            return err("coefficients must be finite");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning rate must be positive");
        }
        Ok(())
    }
}

/// One stored experience: the state as the scorer saw it, the branching
/// action, and the frozen regression target. Encodings are shared: every
/// decision level of a descent stores one transition, and the same tree state
/// recurs across iterations.
#[derive(Debug, Clone)]
pub struct Transition {
    pub encoding: Arc<StateEncoding>,
    pub action: usize,
    pub target: f64,
}

/// Fixed-capacity FIFO ring with uniform without-replacement sampling.
#[derive(Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        Self { items: Vec::new(), capacity, next: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }

    /// `min(batch, len)` distinct indices, uniform without replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
        let n = self.items.len();
        let k = batch.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// Regression target from a node's backed-up statistics: the clamped relative
/// gap of its best objective against the instance incumbent, plus its failure
/// rate, each weighted.
pub fn compute_target(
    node: &MctsNode,
    incumbent: Option<f64>,
    c3: f64,
    c4: f64,
) -> Result<f64, TrainError> {
    if node.visits == 0 {
        return Err(TrainError::UnvisitedNode);
    }
    let g = if node.tau.is_finite() {
        let best = incumbent.expect("a finite objective implies an incumbent");
        ((node.tau - best) / best.max(1.0)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(c3 * g + c4 * (1.0 - node.success_rate()))
}

/// Copies the online parameters into the target.
pub fn sync_target(online: &ScorerParams, target: &mut ScorerParams) {
    target.clone_from(online);
}

/// Per-iteration progress record; one CSV line each in the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub instance: usize,
    pub iteration: u64,
    pub loss: f64,
    pub incumbent: Option<f64>,
    pub buffer_len: usize,
}

/// Events surfaced to the caller during training.
pub enum TrainEvent<'a> {
    InstanceStart { index: usize },
    Iteration { record: TrainRecord, tree: &'a MctsTree },
    Checkpoint { step: u64, params: &'a ScorerParams },
    InstanceSkipped { index: usize, reason: String },
}

/// Trains a fresh scorer over the instances. Deterministic in the config
/// seed: two runs produce identical parameters.
pub fn train(
    instances: &[Arc<CopInstance>],
    config: &TrainConfig,
    on_event: &mut dyn FnMut(TrainEvent),
) -> Result<ScorerParams, TrainError> {
    config.validate()?;
    let initial = ScorerParams::init(config.embed_dim, config.rounds, config.hidden, config.seed);
    train_from(initial, instances, config, on_event)
}

/// Trains starting from existing parameters (checkpoint warm start).
pub fn train_from(
    initial: ScorerParams,
    instances: &[Arc<CopInstance>],
    config: &TrainConfig,
    on_event: &mut dyn FnMut(TrainEvent),
) -> Result<ScorerParams, TrainError> {
    config.validate()?;
    if instances.is_empty() {
        return Err(TrainError::NoInstances);
    }
    let mut online = initial;
    let mut target = online.clone();
    let mut target_version: u64 = 1;
    let mut adam = AdamState::new(&online);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut grad_steps: u64 = 0;

    for (index, instance) in instances.iter().enumerate() {
        on_event(TrainEvent::InstanceStart { index });
        let topo = Arc::new(GraphTopology::from_instance(instance));
        let mut tree = MctsTree::new(instance);
        let mut incumbent: Option<f64> = None;
        // The state at a tree node never changes, so its encoding is computed
        // once and shared by every transition stored against it.
        let mut encodings: FxHashMap<NodeId, Arc<StateEncoding>> = FxHashMap::default();

        for iteration in 0..config.t_max {
            let source =
                ScorerQ { params: &target, topo: Arc::clone(&topo), version: target_version };
            let selection = match tree.select(instance, &source, config.c1) {
                Ok(s) => s,
                Err(err) => {
                    on_event(TrainEvent::InstanceSkipped { index, reason: err.to_string() });
                    break;
                }
            };
            let mut path = selection.path;
            let mut state = selection.state;

            match selection.kind {
                SelectionKind::Leaf { node } => {
                    let expansion = tree.expand(node, &mut state, &mut rng)?;
                    path.push(expansion.value_node);
                    let prefix = tree.bindings_along(&path);
                    for _ in 0..config.n_sim {
                        match expansion.outcome {
                            ExpandOutcome::Deadend => {
                                tree.backup(&path, &SimOutcome::failure());
                            }
                            ExpandOutcome::Solution { objective } => {
                                absorb(&mut incumbent, objective);
                                tree.mirror(instance, &prefix, config.alpha_step);
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
                                let (outcome, order) =
                                    run_playout(&mut state, &mut rng, config.playout);
                                let mut sim_path = path.clone();
                                if let Some(&(first_var, _)) = order.first() {
                                    let child = tree
                                        .find_var_child(expansion.value_node, first_var)
                                        .expect("open expansions have every unbound child");
                                    sim_path.push(child);
                                }
                                if outcome.success {
                                    absorb(&mut incumbent, outcome.objective.unwrap());
                                    let mut full = prefix.clone();
                                    full.extend(order.iter().copied());
                                    tree.mirror(instance, &full, config.alpha_step);
                                }
                                tree.backup(&sim_path, &outcome);
                            }
                        }
                    }
                }
                SelectionKind::Terminal { node } => {
                    // Re-reached a settled state (possible only when selection
                    // had no unsettled subtree left to route into): refresh its
                    // statistics. No playout happened, so nothing is mirrored.
                    let terminal = tree.node(node).terminal.expect("terminal selection");
                    let outcome = match terminal {
                        crate::mcts::Terminal::Solution { objective } => {
                            absorb(&mut incumbent, objective);
                            SimOutcome {
                                success: true,
                                solution: Some(state.assignment()),
                                objective: Some(objective),
                            }
                        }
                        crate::mcts::Terminal::Deadend => SimOutcome::failure(),
                    };
                    for _ in 0..config.n_sim {
                        tree.backup(&path, &outcome);
                    }
                }
            }

            // One transition per decision level of the descent: the state at
            // each value node paired with the variable chosen there, with the
            // target computed from the chosen child's statistics as they
            // stand after this iteration's backups.
            store_path_transitions(
                &tree,
                &path,
                instance,
                &topo,
                &mut encodings,
                incumbent,
                config,
                &mut buffer,
            )?;

            let indices = buffer.sample_indices(config.batch_size, &mut rng);
            let batch: Vec<BatchItem> = indices
                .iter()
                .map(|&i| {
                    let t = buffer.get(i);
                    BatchItem { encoding: &t.encoding, action: t.action, target: t.target }
                })
                .collect();
            let loss = train_step(&batch, &mut online, &mut adam, config.learning_rate)?;
            grad_steps += 1;
            if config.sync_periodic && grad_steps % config.target_sync_period == 0 {
                sync_target(&online, &mut target);
                target_version += 1;
            }
            if let Some(every) = config.checkpoint_every {
                if grad_steps % every == 0 {
                    on_event(TrainEvent::Checkpoint { step: grad_steps, params: &online });
                }
            }
            on_event(TrainEvent::Iteration {
                record: TrainRecord {
                    instance: index,
                    iteration,
                    loss,
                    incumbent,
                    buffer_len: buffer.len(),
                },
                tree: &tree,
            });
        }

        if config.sync_per_instance {
            sync_target(&online, &mut target);
            target_version += 1;
        }
    }
    Ok(online)
}

#[allow(clippy::too_many_arguments)]
fn store_path_transitions(
    tree: &MctsTree,
    path: &[NodeId],
    instance: &Arc<CopInstance>,
    topo: &Arc<GraphTopology>,
    encodings: &mut FxHashMap<NodeId, Arc<StateEncoding>>,
    incumbent: Option<f64>,
    config: &TrainConfig,
    buffer: &mut ReplayBuffer,
) -> Result<(), TrainError> {
    let mut replay = crate::state::SearchState::new(instance);
    let pairs: Vec<&[NodeId]> = path.windows(2).collect();
    for (p, pair) in pairs.iter().enumerate() {
        let (parent, child) = (pair[0], pair[1]);
        match tree.node(child).kind {
            crate::mcts::NodeKind::Variable { var } => {
                let encoding = encodings
                    .entry(parent)
                    .or_insert_with(|| {
                        Arc::new(StateEncoding::from_state(&replay, Arc::clone(topo)))
                    })
                    .clone();
                let target =
                    compute_target(tree.node(child), incumbent, config.c3, config.c4)?;
                buffer.push(Transition { encoding, action: var, target });
            }
            crate::mcts::NodeKind::Value { var, value } => {
                // The path's final value node (expansion or terminal) has no
                // decision after it; skip the replay there, not least because
                // deadends would wipe out.
                if p + 1 < pairs.len() {
                    let outcome = replay.propagate(var, value);
                    debug_assert_eq!(outcome, crate::state::Propagation::Consistent);
                }
            }
            crate::mcts::NodeKind::Root => unreachable!("root is never a child"),
        }
    }
    Ok(())
}

fn absorb(incumbent: &mut Option<f64>, objective: f64) {
    match incumbent {
        Some(best) if *best <= objective => {}
        _ => *incumbent = Some(objective),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rb::{rb_generate, RbParams};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            embed_dim: 8,
            rounds: 2,
            hidden: 8,
            t_max: 12,
            n_sim: 3,
            buffer_capacity: 64,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn tiny_instances(count: usize, base_seed: u64) -> Vec<Arc<CopInstance>> {
        (0..count)
            .map(|i| {
                let params = RbParams {
                    arity: 2,
                    num_variables: 6,
                    domain_exponent: 0.7,
                    density: 1.0,
                    tightness: 0.2,
                    weight_range: 4,
                    seed: base_seed + i as u64,
                };
                Arc::new(rb_generate(&params).unwrap())
            })
            .collect()
    }

    #[test]
    fn single_iteration_stores_one_transition() {
        let instances = tiny_instances(1, 40);
        let config = TrainConfig { t_max: 1, ..tiny_config() };
        let mut records = Vec::new();
        let mut grad_steps = 0;
        train(&instances, &config, &mut |event| {
            if let TrainEvent::Iteration { record, .. } = event {
                records.push(record);
                grad_steps += 1;
            }
        })
        .unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].buffer_len, 1);
        assert!(grad_steps <= 1);
    }

    #[test]
    fn replay_buffer_evicts_fifo_and_samples_distinct() {
        let instances = tiny_instances(1, 41);
        let topo = Arc::new(GraphTopology::from_instance(&instances[0]));
        let state = crate::state::SearchState::new(&instances[0]);
        let enc = Arc::new(StateEncoding::from_state(&state, topo));
        let mut buffer = ReplayBuffer::new(3);
        for i in 0..5 {
            buffer.push(Transition { encoding: enc.clone(), action: 0, target: i as f64 });
        }
        assert_eq!(buffer.len(), 3);
        let targets: Vec<f64> = (0..3).map(|i| buffer.get(i).target).collect();
        // Ring order after wrapping twice: [3, 4, 2].
        assert_eq!(targets, vec![3.0, 4.0, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = buffer.sample_indices(2, &mut rng);
        assert_eq!(idx.len(), 2);
        assert_ne!(idx[0], idx[1]);
        let all = buffer.sample_indices(10, &mut rng);
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn target_formula_cases() {
        let mk = |visits, successes, tau| {
            let mut node = MctsNode::new_for_tests();
            node.visits = visits;
            node.successes = successes;
            node.tau = tau;
            node
        };
        // Objective equal to the incumbent with perfect success rate: 0.
        let node = mk(5, 5, 10.0);
        assert_eq!(compute_target(&node, Some(10.0), 1.0, 1.0).unwrap(), 0.0);
        // Success rate 3/5 with zero gap and c4 = 1: 0.4.
        let node = mk(5, 3, 10.0);
        let y = compute_target(&node, Some(10.0), 1.0, 1.0).unwrap();
        assert!((y - 0.4).abs() < 1e-12);
        // No success at all: clamp gives c3 + c4.
        let node = mk(4, 0, f64::INFINITY);
        assert_eq!(compute_target(&node, None, 0.7, 0.3).unwrap(), 1.0);
        // Unvisited nodes are an error.
        let node = mk(0, 0, f64::INFINITY);
        assert!(matches!(compute_target(&node, None, 1.0, 1.0), Err(TrainError::UnvisitedNode)));
    }

    #[test]
    fn degenerate_coefficients_order_by_single_statistics() {
        let mk = |successes, tau| {
            let mut node = MctsNode::new_for_tests();
            node.visits = 10;
            node.successes = successes;
            node.tau = tau;
            node
        };
        let nodes = [mk(9, 14.0), mk(2, 11.0), mk(6, 19.0)];
        // c3 = 0: targets order by failure rate alone.
        let ys: Vec<f64> =
            nodes.iter().map(|n| compute_target(n, Some(10.0), 0.0, 1.0).unwrap()).collect();
        let mut by_y: Vec<usize> = (0..3).collect();
        by_y.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
        let mut by_fail: Vec<usize> = (0..3).collect();
        by_fail.sort_by_key(|&i| 10 - nodes[i].successes);
        assert_eq!(by_y, by_fail);
        // c4 = 0: targets order by objective gap alone.
        let ys: Vec<f64> =
            nodes.iter().map(|n| compute_target(n, Some(10.0), 1.0, 0.0).unwrap()).collect();
        let mut by_y: Vec<usize> = (0..3).collect();
        by_y.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
        let mut by_tau: Vec<usize> = (0..3).collect();
        by_tau.sort_by(|&a, &b| nodes[a].tau.total_cmp(&nodes[b].tau));
        assert_eq!(by_y, by_tau);
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let instances = tiny_instances(2, 42);
        let config = tiny_config();
        let a = train(&instances, &config, &mut |_| {}).unwrap();
        let b = train(&instances, &config, &mut |_| {}).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig { seed: 6, ..config };
        let c = train(&instances, &other, &mut |_| {}).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sync_target_copies_and_is_idempotent() {
        let online = ScorerParams::init(6, 1, 4, 3);
        let mut target = ScorerParams::init(6, 1, 4, 9);
        assert_ne!(online, target);
        sync_target(&online, &mut target);
        assert_eq!(online, target);
        sync_target(&online, &mut target);
        assert_eq!(online, target);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let instances = tiny_instances(1, 44);
        for bad in [
            TrainConfig { t_max: 0, ..tiny_config() },
            TrainConfig { batch_size: 0, ..tiny_config() },
            TrainConfig { learning_rate: 0.0, ..tiny_config() },
            TrainConfig { c3: f64::NAN, ..tiny_config() },
        ] {
            assert!(matches!(
                train(&instances, &bad, &mut |_| {}),
                Err(TrainError::Config(_))
            ));
        }
        assert!(matches!(
            train(&[], &tiny_config(), &mut |_| {}),
            Err(TrainError::NoInstances)
        ));
    }

    #[test]
    fn checkpoints_fire_at_the_configured_period() {
        let instances = tiny_instances(1, 45);
        let config = TrainConfig { checkpoint_every: Some(5), ..tiny_config() };
        let mut checkpoints = Vec::new();
        train(&instances, &config, &mut |event| {
            if let TrainEvent::Checkpoint { step, .. } = event {
                checkpoints.push(step);
            }
        })
        .unwrap();
        assert_eq!(checkpoints, vec![5, 10]);
    }

    #[test]
    fn trees_stay_valid_throughout_training() {
        let instances = tiny_instances(1, 46);
        let config = TrainConfig { t_max: 60, ..tiny_config() };
        let mut checked = 0u32;
        train(&instances, &config, &mut |event| {
            if let TrainEvent::Iteration { tree, .. } = event {
                tree.validate_structure().unwrap();
                checked += 1;
            }
        })
        .unwrap();
        assert_eq!(checked, 60);
    }

    use crate::nn::GraphTopology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
}
