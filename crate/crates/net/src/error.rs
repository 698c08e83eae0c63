use std::path::PathBuf;

use nes_core::CoreError;
use nes_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("stacked player representation requested for the non-cubic game {0}")]
    NonCubicStackRequested(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite training loss at step {step}; offending batch written to {}", dump.display())]
    NonFiniteLoss { step: usize, dump: PathBuf },
    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
