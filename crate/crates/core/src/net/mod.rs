//! Blink-intent classifier: a residual MLP over a flattened frame history,
//! trained from scratch with exact backpropagation and Adam.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::ModelCheckpoint;
pub use layers::{mish, Mode, Parameters};
pub use model::{BlinkNet, NetConfig};
pub use train::{evaluate, train, EpochRecord, TrainConfig, TrainOutcome, WindowDataset};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("train-mode forward needs at least 2 rows for batch statistics, got {batch}")]
    BatchTooSmallForTrainMode { batch: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("label {0} is not a class index")]
    BadLabel(usize),
    #[error("backward called without a preceding forward pass")]
    NoForwardCache,
    #[error("inconsistent architecture: {0}")]
    InconsistentArchitecture(String),
    #[error("training and validation splits must be non-empty")]
    EmptySplit,
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
