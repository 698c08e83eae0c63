use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid game shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("payoff tensor of player {player} is constant; it cannot be standardized")]
    ConstantPayoff { player: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid joint distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid selection targets: {0}")]
    InvalidTargets(String),
    #[error("unknown parameterization `{0}`")]
    UnknownParameterization(String),
    #[error("unknown solution concept `{0}`")]
    UnknownConcept(String),
    #[error("parameterization MT needs an explicit target joint")]
    MissingTargetJoint,
    #[error("floor {floor} is too large for {joint_size} joint actions (floor * |A| must be < 1)")]
    FloorTooLarge { floor: f64, joint_size: usize },
    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
