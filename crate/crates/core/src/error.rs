//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the crosscoder toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed shapes, indices or values outside an operation's contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A file does not follow the expected binary or text format.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A file is shorter or longer than its header declares.
    #[error("corrupt file {path}: expected {expected} bytes, found {actual}")]
    Corruption {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    /// Manifest, shard and sidecar disagree with one another.
    #[error("validation failed: {0}")]
    Validation(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {msg}")]
    Training { step: usize, msg: String },

    /// A numerical routine produced NaN or infinity.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A feature direction has (near) zero norm and cannot be used for steering.
    #[error("{} has a degenerate decoder direction (norm {norm:e})", feature.map_or("steering vector".to_string(), |k| format!("feature {k}")))]
    DegenerateFeature { feature: Option<usize>, norm: f64 },

    /// Text contains a character the toy tokenizer cannot represent.
    #[error("cannot tokenize character {ch:?} at offset {offset}")]
    Tokenize { ch: char, offset: usize },

    /// Rendering a snippet needed metadata that is missing.
    #[error("rendering failed: missing metadata for sequence {sequence_id} position {position}")]
    MissingMetadata { sequence_id: u64, position: u32 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

macro_rules! ensure_input {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::InvalidInput(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure_input;
