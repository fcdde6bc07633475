use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid condition `{given}`; valid conditions are: {valid}")]
    InvalidCondition { given: String, valid: String },

    #[error("{path}: parse error at byte {offset}: {message}")]
    IdxParse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("image is empty (no nonzero pixels)")]
    EmptyImage,

    #[error("forward cache missing or stale; run forward() first")]
    MissingCache,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_geometry(msg: impl Into<String>) -> Self {
        Error::InvalidGeometry(msg.into())
    }
}
