use thiserror::Error;

use crate::protocol::Outcome;

pub type Result<T> = std::result::Result<T, ZenoError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZenoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `U(1)` is zero for the requested symbol, so `U(q)/U(1)` has no value.
    #[error("estimator undefined: no runs of length 1 for symbol {0:?}")]
    UndefinedEstimator(Outcome),

    #[error("fit failed after {iterations} iterations: {reason} (objective {objective:.6e})")]
    FitFailure {
        reason: String,
        iterations: usize,
        objective: f64,
    },
}

impl ZenoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ZenoError::InvalidInput(msg.into())
    }
}
