use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Bad argument: wrong length, shape mismatch, invalid configuration value.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Misuse of an API contract (mixed tapes, non-scalar loss, oversized oracle grid).
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values, singular discretization, NaN loss.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Malformed file contents (checkpoint, WAV, config).
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
