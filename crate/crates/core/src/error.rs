use std::path::PathBuf;

use crate::trace::GuidanceTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown class label {0:?}")]
    UnknownLabel(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Training { step: usize, loss: f64 },

    #[error("separation diverged at reverse step {step}: {reason}")]
    Divergence {
        step: usize,
        reason: String,
        trace: Box<GuidanceTrace>,
    },

    #[error("cannot ingest {path}: {message} (byte offset {offset})")]
    Ingestion {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(context: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
