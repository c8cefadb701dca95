use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum PpdeError {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("decomposition failed at pivot {pivot}: {reason}")]
    Decomposition { pivot: usize, reason: String },

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PpdeError>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(PpdeError::Param(msg.into()))
}
