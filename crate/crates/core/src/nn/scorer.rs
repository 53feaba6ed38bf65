//! Graph message-passing Q-scorer.
//!
//! States encode as a bipartite variable/constraint graph with raw feature
//! vectors per node. Embeddings initialize through linear projections, then K
//! rounds alternate a constraint update (aggregating the previous round's
//! variable embeddings) and a variable update (aggregating the fresh
//! constraint embeddings). Summing all variable embeddings pools the graph;
//! the Q head scores one action as `mlp_q([pooled : h_action])`.
//!
//! The training path replays the whole composition with a manual backward
//! pass; no autodiff framework is involved.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{add_assign, axpy, Matrix};
use super::mlp::{Mlp, MlpTape};
use super::NnError;
use crate::heuristics::{
    normalized_ctr_features, normalized_var_features, HeuristicError, VarOrdering,
    CTR_FEATURE_DIM, VAR_FEATURE_DIM,
};
use crate::instance::CopInstance;
use crate::state::SearchState;

pub const DEFAULT_EMBED_DIM: usize = 128;
pub const DEFAULT_ROUNDS: usize = 5;
pub const DEFAULT_HIDDEN: usize = 64;

/// All learnable tensors of the scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub embed_dim: usize,
    pub rounds: usize,
    pub hidden: usize,
    /// Variable feature projection, `VAR_FEATURE_DIM x p`.
    pub var_proj: Matrix,
    /// Constraint feature projection, `CTR_FEATURE_DIM x p`.
    pub ctr_proj: Matrix,
    /// Variable update, input `2p + VAR_FEATURE_DIM`, output `p`.
    pub mlp_var: Mlp,
    /// Constraint update, input `2p + CTR_FEATURE_DIM`, output `p`.
    pub mlp_ctr: Mlp,
    /// Q head, input `2p`, output 1.
    pub mlp_q: Mlp,
}

impl ScorerParams {
    /// Fresh parameters with Glorot-uniform weights and zero biases,
    /// deterministic in the seed.
    pub fn init(embed_dim: usize, rounds: usize, hidden: usize, seed: u64) -> Self {
        assert!(embed_dim >= 1 && rounds >= 1 && hidden >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let b = bound(VAR_FEATURE_DIM, embed_dim);
        let var_proj = Matrix::from_fn(VAR_FEATURE_DIM, embed_dim, |_, _| {
            (rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0) * b
        });
        let b = bound(CTR_FEATURE_DIM, embed_dim);
        let ctr_proj = Matrix::from_fn(CTR_FEATURE_DIM, embed_dim, |_, _| {
            (rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0) * b
        });
        Self {
            embed_dim,
            rounds,
            hidden,
            var_proj,
            ctr_proj,
            mlp_var: Mlp::init(2 * embed_dim + VAR_FEATURE_DIM, hidden, embed_dim, &mut rng),
            mlp_ctr: Mlp::init(2 * embed_dim + CTR_FEATURE_DIM, hidden, embed_dim, &mut rng),
            mlp_q: Mlp::init(2 * embed_dim, hidden, 1, &mut rng),
        }
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::init(DEFAULT_EMBED_DIM, DEFAULT_ROUNDS, DEFAULT_HIDDEN, seed)
    }

    /// Same shapes, all zeros; the container used for gradients and moments.
    pub fn zeros_like(&self) -> Self {
        let p = self.embed_dim;
        Self {
            embed_dim: p,
            rounds: self.rounds,
            hidden: self.hidden,
            var_proj: Matrix::zeros(VAR_FEATURE_DIM, p),
            ctr_proj: Matrix::zeros(CTR_FEATURE_DIM, p),
            mlp_var: Mlp::zeros(2 * p + VAR_FEATURE_DIM, self.hidden, p),
            mlp_ctr: Mlp::zeros(2 * p + CTR_FEATURE_DIM, self.hidden, p),
            mlp_q: Mlp::zeros(2 * p, self.hidden, 1),
        }
    }

    /// Every tensor in declaration order; the order fixes the weight-file
    /// layout and the optimizer's parameter walk.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.var_proj.data(), self.ctr_proj.data()];
        out.extend(self.mlp_var.tensors());
        out.extend(self.mlp_ctr.tensors());
        out.extend(self.mlp_q.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.var_proj.data_mut(), self.ctr_proj.data_mut()];
        out.extend(self.mlp_var.tensors_mut());
        out.extend(self.mlp_ctr.tensors_mut());
        out.extend(self.mlp_q.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_fill(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

/// Bipartite variable/constraint adjacency, fixed per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    pub var_ctrs: Vec<Vec<u32>>,
    pub ctr_vars: Vec<Vec<u32>>,
}

impl GraphTopology {
    pub fn from_instance(instance: &CopInstance) -> Self {
        Self {
            var_ctrs: (0..instance.num_variables())
                .map(|v| instance.constraints_of(v).to_vec())
                .collect(),
            ctr_vars: instance
                .constraints()
                .iter()
                .map(|c| c.scope().iter().map(|&v| v as u32).collect())
                .collect(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.var_ctrs.len()
    }

    pub fn num_ctrs(&self) -> usize {
        self.ctr_vars.len()
    }
}

/// A search state frozen as scorer input: the graph plus per-node raw
/// features. Replay buffers store these so targets can be re-scored later.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoding {
    pub topo: Arc<GraphTopology>,
    /// `num_vars x VAR_FEATURE_DIM`, row-major.
    pub var_feats: Vec<f64>,
    /// `num_ctrs x CTR_FEATURE_DIM`, row-major.
    pub ctr_feats: Vec<f64>,
}

impl StateEncoding {
    pub fn from_state(state: &SearchState, topo: Arc<GraphTopology>) -> Self {
        let mut var_feats = Vec::with_capacity(topo.num_vars() * VAR_FEATURE_DIM);
        for v in 0..topo.num_vars() {
            var_feats.extend_from_slice(&normalized_var_features(state, v));
        }
        let mut ctr_feats = Vec::with_capacity(topo.num_ctrs() * CTR_FEATURE_DIM);
        for c in 0..topo.num_ctrs() {
            ctr_feats.extend_from_slice(&normalized_ctr_features(state, c));
        }
        Self { topo, var_feats, ctr_feats }
    }

    pub fn num_vars(&self) -> usize {
        self.topo.num_vars()
    }

    pub fn num_ctrs(&self) -> usize {
        self.topo.num_ctrs()
    }

    pub fn var_feat(&self, v: usize) -> &[f64] {
        &self.var_feats[v * VAR_FEATURE_DIM..(v + 1) * VAR_FEATURE_DIM]
    }

    pub fn ctr_feat(&self, c: usize) -> &[f64] {
        &self.ctr_feats[c * CTR_FEATURE_DIM..(c + 1) * CTR_FEATURE_DIM]
    }

    pub fn is_bound(&self, v: usize) -> bool {
        self.var_feat(v)[1] != 0.0
    }

    /// Unbound variables, ascending: the available actions.
    pub fn actions(&self) -> Vec<usize> {
        (0..self.num_vars()).filter(|&v| !self.is_bound(v)).collect()
    }
}

/// Per-round node embeddings, `count x p` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbedding {
    pub var: Vec<f64>,
    pub ctr: Vec<f64>,
    pub width: usize,
}

impl GraphEmbedding {
    pub fn var_row(&self, v: usize) -> &[f64] {
        &self.var[v * self.width..(v + 1) * self.width]
    }

    pub fn ctr_row(&self, c: usize) -> &[f64] {
        &self.ctr[c * self.width..(c + 1) * self.width]
    }
}

fn check_dims(enc: &StateEncoding, params: &ScorerParams) -> Result<(), NnError> {
    if enc.var_feats.len() != enc.num_vars() * VAR_FEATURE_DIM
        || enc.ctr_feats.len() != enc.num_ctrs() * CTR_FEATURE_DIM
    {
        return Err(NnError::DimensionMismatch {
            what: "feature tensor shape",
            expected: enc.num_vars() * VAR_FEATURE_DIM,
            found: enc.var_feats.len(),
        });
    }
    if params.var_proj.rows() != VAR_FEATURE_DIM || params.var_proj.cols() != params.embed_dim {
        return Err(NnError::DimensionMismatch {
            what: "variable projection",
            expected: VAR_FEATURE_DIM * params.embed_dim,
            found: params.var_proj.rows() * params.var_proj.cols(),
        });
    }
    if params.mlp_var.input_dim() != 2 * params.embed_dim + VAR_FEATURE_DIM
        || params.mlp_ctr.input_dim() != 2 * params.embed_dim + CTR_FEATURE_DIM
        || params.mlp_q.input_dim() != 2 * params.embed_dim
    {
        return Err(NnError::DimensionMismatch {
            what: "mlp input width",
            expected: 2 * params.embed_dim,
            found: params.mlp_q.input_dim(),
        });
    }
    Ok(())
}

fn project(feats: &[f64], dim: usize, proj: &Matrix, out: &mut [f64]) {
    let p = proj.cols();
    for (node, row) in feats.chunks_exact(dim).enumerate() {
        let dst = &mut out[node * p..(node + 1) * p];
        for (r, &f) in row.iter().enumerate() {
            if f != 0.0 {
                axpy(f, proj.row(r), dst);
            }
        }
    }
}

/// Round-0 embeddings: linear projections of the raw features.
pub fn init_embeddings(
    enc: &StateEncoding,
    params: &ScorerParams,
) -> Result<GraphEmbedding, NnError> {
    check_dims(enc, params)?;
    let p = params.embed_dim;
    let mut emb = GraphEmbedding {
        var: vec![0.0; enc.num_vars() * p],
        ctr: vec![0.0; enc.num_ctrs() * p],
        width: p,
    };
    project(&enc.var_feats, VAR_FEATURE_DIM, &params.var_proj, &mut emb.var);
    project(&enc.ctr_feats, CTR_FEATURE_DIM, &params.ctr_proj, &mut emb.ctr);
    Ok(emb)
}

/// One message-passing round: constraints aggregate the previous variable
/// embeddings first, then variables aggregate the fresh constraint
/// embeddings. Neighbor sums over empty neighborhoods are zero vectors.
pub fn message_pass(
    emb: &GraphEmbedding,
    enc: &StateEncoding,
    params: &ScorerParams,
) -> Result<GraphEmbedding, NnError> {
    check_dims(enc, params)?;
    let p = params.embed_dim;
    let mut next = GraphEmbedding {
        var: vec![0.0; enc.num_vars() * p],
        ctr: vec![0.0; enc.num_ctrs() * p],
        width: p,
    };
    let mut input = vec![0.0; 2 * p + CTR_FEATURE_DIM.max(VAR_FEATURE_DIM)];
    for c in 0..enc.num_ctrs() {
        let input = &mut input[..2 * p + CTR_FEATURE_DIM];
        input.fill(0.0);
        for &v in &enc.topo.ctr_vars[c] {
            add_assign(emb.var_row(v as usize), &mut input[..p]);
        }
        input[p..2 * p].copy_from_slice(emb.ctr_row(c));
        input[2 * p..].copy_from_slice(enc.ctr_feat(c));
        params.mlp_ctr.forward(input, &mut next.ctr[c * p..(c + 1) * p]);
    }
    for v in 0..enc.num_vars() {
        let input = &mut input[..2 * p + VAR_FEATURE_DIM];
        input.fill(0.0);
        for &c in &enc.topo.var_ctrs[v] {
            add_assign(next.ctr_row(c as usize), &mut input[..p]);
        }
        input[p..2 * p].copy_from_slice(emb.var_row(v));
        input[2 * p..].copy_from_slice(enc.var_feat(v));
        params.mlp_var.forward(input, &mut next.var[v * p..(v + 1) * p]);
    }
    Ok(next)
}

fn encode(enc: &StateEncoding, params: &ScorerParams) -> Result<GraphEmbedding, NnError> {
    let mut emb = init_embeddings(enc, params)?;
    for _ in 0..params.rounds {
        emb = message_pass(&emb, enc, params)?;
    }
    Ok(emb)
}

fn pooled(emb: &GraphEmbedding, enc: &StateEncoding) -> Vec<f64> {
    let mut pooled = vec![0.0; emb.width];
    for v in 0..enc.num_vars() {
        add_assign(emb.var_row(v), &mut pooled);
    }
    pooled
}

fn q_head(emb: &GraphEmbedding, pooled: &[f64], action: usize, params: &ScorerParams) -> f64 {
    let p = params.embed_dim;
    let mut input = vec![0.0; 2 * p];
    input[..p].copy_from_slice(pooled);
    input[p..].copy_from_slice(emb.var_row(action));
    let mut out = [0.0];
    params.mlp_q.forward(&input, &mut out);
    out[0]
}

/// Q-value for one unbound action.
pub fn q_value(enc: &StateEncoding, action: usize, params: &ScorerParams) -> Result<f64, NnError> {
    if action >= enc.num_vars() || enc.is_bound(action) {
        return Err(NnError::ActionBound(action));
    }
    let emb = encode(enc, params)?;
    let pool = pooled(&emb, enc);
    Ok(q_head(&emb, &pool, action, params))
}

/// Q-values for every unbound action, sharing one encoding pass. Results pair
/// each action with its score, ascending by action index.
pub fn q_values_all(
    enc: &StateEncoding,
    params: &ScorerParams,
) -> Result<Vec<(usize, f64)>, NnError> {
    let actions = enc.actions();
    if actions.is_empty() {
        return Err(NnError::NoUnbound);
    }
    let emb = encode(enc, params)?;
    let pool = pooled(&emb, enc);
    Ok(actions.into_iter().map(|a| (a, q_head(&emb, &pool, a, params))).collect())
}

/// Action with the minimum score; ties break to the lowest index.
pub fn argmin_action(scores: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &(a, q) in scores {
        let better = match best {
            Some((bq, ba)) => q < bq || (q == bq && a < ba),
            None => true,
        };
        if better {
            best = Some((q, a));
        }
    }
    best.map(|(_, a)| a)
}

/// Reusable forward trace for the training path: one full encoding with every
/// MLP tape retained, so a scalar upstream gradient back-propagates through
/// the whole composition.
#[derive(Debug, Default)]
pub struct Workspace {
    // embeddings[k], k = 0..=rounds
    embeddings: Vec<GraphEmbedding>,
    ctr_tapes: Vec<Vec<MlpTape>>,
    var_tapes: Vec<Vec<MlpTape>>,
    pooled: Vec<f64>,
    q_tape: MlpTape,
    q_action: usize,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs the full encoding for `enc`, retaining tapes.
    pub fn forward(&mut self, enc: &StateEncoding, params: &ScorerParams) -> Result<(), NnError> {
        check_dims(enc, params)?;
        let p = params.embed_dim;
        let rounds = params.rounds;
        self.embeddings.clear();
        self.embeddings.push(init_embeddings(enc, params)?);
        self.ctr_tapes.resize_with(rounds, Vec::new);
        self.var_tapes.resize_with(rounds, Vec::new);
        let mut input = vec![0.0; 2 * p + CTR_FEATURE_DIM.max(VAR_FEATURE_DIM)];
        for k in 0..rounds {
            let prev = self.embeddings.last().unwrap().clone();
            let mut next = GraphEmbedding {
                var: vec![0.0; enc.num_vars() * p],
                ctr: vec![0.0; enc.num_ctrs() * p],
                width: p,
            };
            let ctr_tapes = &mut self.ctr_tapes[k];
            ctr_tapes.resize_with(enc.num_ctrs(), MlpTape::default);
            for c in 0..enc.num_ctrs() {
                let input = &mut input[..2 * p + CTR_FEATURE_DIM];
                input.fill(0.0);
                for &v in &enc.topo.ctr_vars[c] {
                    add_assign(prev.var_row(v as usize), &mut input[..p]);
                }
                input[p..2 * p].copy_from_slice(prev.ctr_row(c));
                input[2 * p..].copy_from_slice(enc.ctr_feat(c));
                params.mlp_ctr.forward_taped(
                    input,
                    &mut next.ctr[c * p..(c + 1) * p],
                    &mut ctr_tapes[c],
                );
            }
            let var_tapes = &mut self.var_tapes[k];
            var_tapes.resize_with(enc.num_vars(), MlpTape::default);
            for v in 0..enc.num_vars() {
                let input = &mut input[..2 * p + VAR_FEATURE_DIM];
                input.fill(0.0);
                for &c in &enc.topo.var_ctrs[v] {
                    add_assign(next.ctr_row(c as usize), &mut input[..p]);
                }
                input[p..2 * p].copy_from_slice(prev.var_row(v));
                input[2 * p..].copy_from_slice(enc.var_feat(v));
                params.mlp_var.forward_taped(
                    input,
                    &mut next.var[v * p..(v + 1) * p],
                    &mut var_tapes[v],
                );
            }
            self.embeddings.push(next);
        }
        let last = self.embeddings.last().unwrap();
        self.pooled = pooled(last, enc);
        Ok(())
    }

    /// Scores `action` on the traced encoding, retaining the Q-head tape.
    pub fn q(&mut self, enc: &StateEncoding, action: usize, params: &ScorerParams) -> Result<f64, NnError> {
        if action >= enc.num_vars() || enc.is_bound(action) {
            return Err(NnError::ActionBound(action));
        }
        let p = params.embed_dim;
        let last = self.embeddings.last().expect("forward before q");
        let mut input = vec![0.0; 2 * p];
        input[..p].copy_from_slice(&self.pooled);
        input[p..].copy_from_slice(last.var_row(action));
        let mut out = [0.0];
        params.mlp_q.forward_taped(&input, &mut out, &mut self.q_tape);
        self.q_action = action;
        Ok(out[0])
    }

    /// Back-propagates `dq` through the traced composition, accumulating into
    /// `grads` (which must share shapes with the parameters).
    pub fn backward(
        &self,
        enc: &StateEncoding,
        params: &ScorerParams,
        dq: f64,
        grads: &mut ScorerParams,
    ) {
        let p = params.embed_dim;
        let n = enc.num_vars();
        let e = enc.num_ctrs();
        // Q head.
        let mut dq_input = vec![0.0; 2 * p];
        params.mlp_q.backward(&self.q_tape, &[dq], &mut grads.mlp_q, Some(&mut dq_input));
        // Pooling broadcasts its gradient to every variable; the action row
        // receives the concatenation's second half on top.
        let mut dvar_cur = vec![0.0; n * p];
        let mut dctr_cur = vec![0.0; e * p];
        for v in 0..n {
            dvar_cur[v * p..(v + 1) * p].copy_from_slice(&dq_input[..p]);
        }
        add_assign(&dq_input[p..], &mut dvar_cur[self.q_action * p..(self.q_action + 1) * p]);

        let mut dvar_prev = vec![0.0; n * p];
        let mut dctr_prev = vec![0.0; e * p];
        let mut dinput = vec![0.0; 2 * p + CTR_FEATURE_DIM.max(VAR_FEATURE_DIM)];
        for k in (0..params.rounds).rev() {
            // Variable updates of round k consumed [sum ctr^k : var^{k-1} : F_x].
            for v in 0..n {
                let dout = &dvar_cur[v * p..(v + 1) * p];
                if dout.iter().all(|&d| d == 0.0) {
                    continue;
                }
                let dinput = &mut dinput[..2 * p + VAR_FEATURE_DIM];
                dinput.fill(0.0);
                params.mlp_var.backward(
                    &self.var_tapes[k][v],
                    dout,
                    &mut grads.mlp_var,
                    Some(dinput),
                );
                for &c in &enc.topo.var_ctrs[v] {
                    add_assign(&dinput[..p], &mut dctr_cur[c as usize * p..(c as usize + 1) * p]);
                }
                add_assign(&dinput[p..2 * p], &mut dvar_prev[v * p..(v + 1) * p]);
            }
            // Constraint updates of round k consumed [sum var^{k-1} : ctr^{k-1} : F_c].
            for c in 0..e {
                let dout = &dctr_cur[c * p..(c + 1) * p];
                if dout.iter().all(|&d| d == 0.0) {
                    continue;
                }
                let dinput = &mut dinput[..2 * p + CTR_FEATURE_DIM];
                dinput.fill(0.0);
                params.mlp_ctr.backward(
                    &self.ctr_tapes[k][c],
                    dout,
                    &mut grads.mlp_ctr,
                    Some(dinput),
                );
                for &v in &enc.topo.ctr_vars[c] {
                    add_assign(&dinput[..p], &mut dvar_prev[v as usize * p..(v as usize + 1) * p]);
                }
                add_assign(&dinput[p..2 * p], &mut dctr_prev[c * p..(c + 1) * p]);
            }
            std::mem::swap(&mut dvar_cur, &mut dvar_prev);
            std::mem::swap(&mut dctr_cur, &mut dctr_prev);
            dvar_prev.fill(0.0);
            dctr_prev.fill(0.0);
        }
        // Round 0: embeddings were linear projections of the raw features.
        for v in 0..n {
            let dout = &dvar_cur[v * p..(v + 1) * p];
            for (r, &f) in enc.var_feat(v).iter().enumerate() {
                if f != 0.0 {
                    axpy(f, dout, grads.var_proj.row_mut(r));
                }
            }
        }
        for c in 0..e {
            let dout = &dctr_cur[c * p..(c + 1) * p];
            for (r, &f) in enc.ctr_feat(c).iter().enumerate() {
                if f != 0.0 {
                    axpy(f, dout, grads.ctr_proj.row_mut(r));
                }
            }
        }
    }
}

/// Variable ordering that scores every unbound variable with the scorer and
/// branches on the minimum.
pub struct NeuralOrdering {
    params: Arc<ScorerParams>,
    topo: Arc<GraphTopology>,
}

impl NeuralOrdering {
    pub fn new(instance: &CopInstance, params: Arc<ScorerParams>) -> Self {
        Self { params, topo: Arc::new(GraphTopology::from_instance(instance)) }
    }
}

impl VarOrdering for NeuralOrdering {
    fn select_var(&mut self, state: &SearchState) -> Result<usize, HeuristicError> {
        let enc = StateEncoding::from_state(state, Arc::clone(&self.topo));
        let scores = q_values_all(&enc, &self.params).map_err(|_| HeuristicError::NoUnbound)?;
        argmin_action(&scores).ok_or(HeuristicError::NoUnbound)
    }

    fn name(&self) -> &'static str {
        "neural"
    }
}
