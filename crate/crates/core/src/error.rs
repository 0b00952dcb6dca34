//! Crate-wide error type.

use std::fmt;

/// Errors produced by the PAD pipeline.
///
/// The split between variants mirrors how callers react to them: `Shape`,
/// `Contract` and `Format` are data-contract violations, `Numeric` signals a
/// numeric failure inside an otherwise valid computation.
#[derive(Debug)]
pub enum Error {
    /// Tensor or layer shape mismatch.
    Shape(String),
    /// A precondition on the data itself was violated (attack sample in a
    /// training split, duplicate ids, empty class, mismatched id sets, ...).
    Contract(String),
    /// A serialized artifact is unreadable: bad magic, unsupported version,
    /// truncation, malformed records.
    Format(String),
    /// Non-finite values or failed convergence.
    Numeric(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Contract(msg) => write!(f, "data contract violation: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
