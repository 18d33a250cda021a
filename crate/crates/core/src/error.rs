use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TagmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TagmError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("empty sequence: at least one timestep is required")]
    EmptySequence,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: truncated file: header declares {expected} payload bytes but only {available} are available")]
    Truncated {
        path: PathBuf,
        expected: u64,
        available: u64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("metadata error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TagmError {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        TagmError::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TagmError::Io {
            path: path.into(),
            source,
        }
    }
}
