use std::io;

use thiserror::Error;

/// Failure modes shared by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("degenerate instance: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
