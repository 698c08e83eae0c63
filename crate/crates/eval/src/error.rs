use thiserror::Error;

use nes_core::CoreError;
use nes_net::NetError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fixture `{fixture}`: {violations} fact(s) violated:\n{details}")]
    FactViolated {
        fixture: String,
        violations: usize,
        details: String,
    },
    #[error("game is not two-player zero-sum")]
    NotZeroSum,
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
