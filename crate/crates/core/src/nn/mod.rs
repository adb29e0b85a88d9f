//! Feedforward ReLU networks with hand-written backpropagation, Adam, the
//! training losses and gradient routing through the projection layer.
//!
//! Batched tensors hold one sample per column.

mod adam;
mod loss;
mod mlp;
mod policy;
mod train;

pub use adam::{Adam, AdamConfig};
pub use loss::{
    loss_mse, loss_mse_grad, loss_penalty, loss_penalty_grad, projection_backward, ProjectionGrads,
    DEFAULT_PENALTY_WEIGHT,
};
pub use mlp::{ForwardCache, Mlp, MlpGrads, MlpParams};
pub use policy::{Architecture, Checkpoint, CheckpointMeta, Policy, PolicyOutput, PolicySpec, CHECKPOINT_VERSION};
pub use train::{loss_and_grads, prepare_projections, train, BatchGrads, TrainConfig, TrainReport, TrainingSet};

use crate::affine::AffineError;
use crate::cbf::CbfError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Affine(#[from] AffineError),
    #[error(transparent)]
    Cbf(#[from] CbfError),
}
