use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("input shorter than the style encoder minimum: got {got} samples, need {min}")]
    TooShort { got: usize, min: usize },

    /// Training or generation produced NaN/inf.
    #[error("non-finite value in {term} at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("integrity check failed for {path}: expected {expected}, found {found}")]
    HashMismatch { path: PathBuf, expected: String, found: String },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
