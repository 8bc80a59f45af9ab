//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Caller violated a documented precondition (shapes, ranges, enums).
    InvalidArgument(String),
    /// Training produced a state we refuse to continue from (non-finite
    /// gradients or losses).
    Training(String),
    /// Config file is malformed or internally inconsistent.
    Config(String),
    /// An on-disk artifact exists but belongs to a different config digest;
    /// refusing to overwrite it silently.
    DigestMismatch { path: String, expected: String, found: String },
    /// An artifact required by this pipeline stage is missing or unreadable.
    Artifact(String),
    Io(std::io::Error),
    Json(serde_json::Error),
    Csv(csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Training(msg) => write!(f, "training failed: {msg}"),
            Error::Config(msg) => write!(f, "bad config: {msg}"),
            Error::DigestMismatch { path, expected, found } => write!(
                f,
                "{path} was produced under config digest {found}, current config digest is \
                 {expected}; refusing to overwrite (remove the file or fix the config)"
            ),
            Error::Artifact(msg) => write!(f, "missing artifact: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
            Error::Csv(e) => write!(f, "csv error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            Error::Csv(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e)
    }
}
