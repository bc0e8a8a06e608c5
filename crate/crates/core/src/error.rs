use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("{path}: {source}")]
    Pgm { path: PathBuf, source: PgmError },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("unalignable: {0}")]
    Unalignable(String),
}

/// Reasons a PGM payload is rejected. Each variant names the offending field.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("unsupported format {0:?}, only binary P5 is accepted")]
    UnsupportedFormat(String),
    #[error("malformed header field `{field}`: {detail}")]
    MalformedHeader { field: &'static str, detail: String },
    #[error("unsupported maxval {0}, expected 255 or 65535")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
