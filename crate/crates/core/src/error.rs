use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error for video {video:?}, field {field}: {detail}")]
    Validation {
        video: String,
        field: &'static str,
        detail: String,
    },
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("non-finite {term} loss at epoch {epoch} (video {video})")]
    NonFiniteLoss {
        term: &'static str,
        epoch: usize,
        video: String,
    },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
