//! The Q-scorer: dense linear algebra, the message-passing forward pass,
//! manual reverse-mode gradients, Adam, and weight (de)serialization.

pub mod adam;
pub mod linalg;
pub mod mlp;
pub mod params_io;
pub mod scorer;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("action {0} is already bound")]
    ActionBound(usize),
    #[error("no unbound variable to score")]
    NoUnbound,
    #[error("training loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("empty training batch")]
    EmptyBatch,
}

pub use adam::{train_step, AdamState, BatchItem, DEFAULT_LEARNING_RATE};
pub use params_io::{load_params, save_params, WeightsError};
pub use scorer::{
    argmin_action, init_embeddings, message_pass, q_value, q_values_all, GraphEmbedding,
    GraphTopology, NeuralOrdering, ScorerParams, StateEncoding, Workspace, DEFAULT_EMBED_DIM,
    DEFAULT_HIDDEN, DEFAULT_ROUNDS,
};
