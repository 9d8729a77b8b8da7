//! Error type shared across the toolkit.

use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure categories. The CLI maps them onto process exit codes:
/// configuration problems exit 2, data problems exit 3, numerical
/// failures exit 4.
#[derive(Debug)]
pub enum Error {
    /// A parameter or configuration value violates its contract.
    InvalidInput(String),
    /// A value fell outside its declared range (no silent clamping).
    OutOfRange(String),
    /// Array or grid dimensions do not line up.
    ShapeMismatch(String),
    /// Structurally valid input for which the operation is undefined
    /// (all-zero frame, flat spectrum, missing edge).
    Degenerate(String),
    /// Unrecognized magic bytes or unsupported version in a data file.
    Format(String),
    /// A data file is truncated or internally inconsistent.
    Corrupt(String),
    /// Underlying I/O failure.
    Io(io::Error),
    /// NaN/Inf detected, diverging optimization, or a failed fit.
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::OutOfRange(msg) => write!(f, "out of range: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Degenerate(msg) => write!(f, "degenerate input: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Corrupt(msg) => write!(f, "corrupt file: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
            Error::Numeric(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::OutOfRange(_) => 2,
            Error::ShapeMismatch(_)
            | Error::Degenerate(_)
            | Error::Format(_)
            | Error::Corrupt(_)
            | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
