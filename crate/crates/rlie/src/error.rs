//! Pipeline-level error type wrapping core errors, IO, and backends.

use std::path::PathBuf;

use rlie_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum RlieError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("backend error: {0}")]
    Backend(String),

    /// Judging stopped before every cell was filled. Everything already
    /// judged is in the cache, so a rerun resumes from here.
    #[error("judging incomplete: {missing} cells missing, partial results cached; first error: {first}")]
    MissingCells { missing: usize, first: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("dataset error at {path}:{line}: {detail}")]
    Dataset {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

impl RlieError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, RlieError>;
