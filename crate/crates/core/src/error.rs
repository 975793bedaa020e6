use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("truncated file: expected {expected} more bytes while reading {what}")]
    Truncated { what: &'static str, expected: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("no FLOP calculator for layer kind `{0}`")]
    NoCalculator(String),

    #[error("sequence length {0} is not a power of two (required for FFT cost terms)")]
    NonPowerOfTwo(u64),

    #[error("iso-state target {target} unreachable; nearest achievable total is {nearest}")]
    IsoStateUnreachable { target: u64, nearest: u64 },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("correlation undefined: {0}")]
    Undefined(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("missing inputs: {0:?}")]
    Missing(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
