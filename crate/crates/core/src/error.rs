use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum TrapError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension out of range: d = {0} (supported: 1..=3)")]
    DimensionOutOfRange(usize),

    #[error("non-positive environment: site {site} has zero mass and no floor is configured")]
    NonPositiveEnvironment { site: usize },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("path never visits the target set")]
    NotVisited,

    #[error("undersized sample: need at least {needed}, got {got}")]
    UndersizedSample { needed: usize, got: usize },

    #[error("trajectory format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrapError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(TrapError::InvalidInput(msg.into()))
}
