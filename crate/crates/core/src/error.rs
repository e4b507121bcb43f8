use std::path::PathBuf;

/// Errors produced anywhere in the simulation and reduction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance factorization failed after jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("time step {step} failed: {reason}")]
    StepFailure { step: usize, reason: String },

    #[error("rollout produced a non-finite state at step {step}")]
    RolloutFailure { step: usize },

    #[error("training failed at epoch {epoch}: {reason}")]
    TrainingFailure {
        epoch: usize,
        reason: String,
        history: Vec<f64>,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("all realizations failed")]
    AllFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
