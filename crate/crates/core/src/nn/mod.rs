//! A small CPU tensor engine for the visual model: same-padded 3x3
//! convolutions, max pooling, inverted dropout, dense layers and a softmax
//! head, with hand-written reverse-mode gradients, Adam, and the local
//! training loop.
//!
//! Activations are laid out channel-major (`[C, H, W]`) and every sample of a
//! minibatch is processed on its own; batch gradients are the mean of the
//! per-sample gradients, so memory does not grow with the batch size.

mod adam;
mod arch;
mod model;
mod ops;
mod tensor;
mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use arch::CnnArch;
pub use model::{cross_entropy, log_softmax, softmax, BatchStats, CnnModel, Mode};
pub use tensor::{ModelWeights, NamedTensor};
pub use train::{
    evaluate, predict_visual, train_local, EpochMetrics, EvalMetrics, ImageSample, LocalMetrics,
    TrainConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
