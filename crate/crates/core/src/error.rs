use std::path::PathBuf;

use thiserror::Error;

use crate::train::BatchSnapshot;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used by front ends to pick an exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration, bad arguments or a malformed request.
    Usage,
    /// Checkpoint or dataset integrity problems.
    Integrity,
    /// Everything else, including broken internal contracts.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite loss at step {step} (loss={loss})")]
    NonFinite { step: u64, loss: f32, snapshot: Box<BatchSnapshot> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::InvalidInput(_) => ErrorClass::Usage,
            Error::Checkpoint(_) | Error::Data(_) | Error::Image { .. } | Error::Io { .. } => ErrorClass::Integrity,
            Error::Contract(_) | Error::NonFinite { .. } => ErrorClass::Internal,
        }
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use contract_err;
pub(crate) use usage_err;
