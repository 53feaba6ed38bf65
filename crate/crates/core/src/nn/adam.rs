//! Adam optimizer and the squared-loss training step.

use super::scorer::{ScorerParams, StateEncoding, Workspace};
use super::NnError;

pub const DEFAULT_LEARNING_RATE: f64 = 5e-5;

/// First/second moment estimates, shaped like the parameters they update.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ScorerParams,
    v: ScorerParams,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(like: &ScorerParams) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut ScorerParams, grads: &ScorerParams, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut ms = self.m.tensors_mut();
        let mut vs = self.v.tensors_mut();
        let mut ps = params.tensors_mut();
        let gs = grads.tensors();
        for t in 0..gs.len() {
            let (m, v, p, g) = (&mut ms[t], &mut vs[t], &mut ps[t], gs[t]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// One training example: a frozen state encoding, the action taken, and the
/// regression target.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub encoding: &'a StateEncoding,
    pub action: usize,
    pub target: f64,
}

/// Mean-squared-error step: scores each example, accumulates gradients of
/// `mean((q - y)^2)`, applies one Adam update, and returns the pre-step loss.
pub fn train_step(
    batch: &[BatchItem],
    params: &mut ScorerParams,
    adam: &mut AdamState,
    lr: f64,
) -> Result<f64, NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut ws = Workspace::new();
    let mut grads = params.zeros_like();
    let mut loss = 0.0f64;
    let scale = 1.0 / batch.len() as f64;
    for item in batch {
        ws.forward(item.encoding, params)?;
        let q = ws.q(item.encoding, item.action, params)?;
        let err = q - item.target;
        loss += err * err * scale;
        ws.backward(item.encoding, params, 2.0 * err * scale, &mut grads);
    }
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss(loss));
    }
    adam.apply(params, &grads, lr);
    Ok(loss)
}
