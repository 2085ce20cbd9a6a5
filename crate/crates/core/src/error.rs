use thiserror::Error;

/// Errors raised by the model, inversion and estimation routines.
#[derive(Debug, Error)]
pub enum MhtError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MhtError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(MhtError::InvalidArgument(msg.into()))
}
