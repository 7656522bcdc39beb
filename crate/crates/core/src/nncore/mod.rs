//! Dense tensors, feed-forward layers with hand-written backpropagation,
//! Adam, and finite-difference gradient checking.

mod adam;
mod checkpoint;
mod dense;
mod gradcheck;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use dense::{
    backward, backward_pre, forward, sigmoid, Activation, DenseLayer, ForwardTrace, Gradients, LayerGrad, LayerTrace,
    Mlp,
};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport, Offender};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layer {layer} expects input width {expected}, got shape {got:?}")]
    Dimension { layer: usize, expected: usize, got: Vec<usize> },
    #[error("stale forward cache: {layers} layers but {cached} cached traces")]
    StaleCache { layers: usize, cached: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite gradient in tensor {tensor} (max |g| = {max_abs})")]
    NonFiniteGradient { tensor: usize, max_abs: f64 },
    #[error("invalid setting: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
