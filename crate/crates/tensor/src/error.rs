use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by `{0}`")]
    NonFiniteDetected(&'static str),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
