use std::path::PathBuf;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("stats fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("non-deterministic objective: {0}")]
    NonDeterministic(String),

    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
