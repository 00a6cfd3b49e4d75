use std::path::PathBuf;

use sumgan_core::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {detail}")]
    ConfigFile { path: PathBuf, line: usize, detail: String },
    #[error("invalid setting {key}: {detail}")]
    Setting { key: String, detail: String },
    #[error("unknown video {0:?}")]
    UnknownVideo(String),
    #[error("checkpoint holds variant {found}, but {requested} was requested")]
    VariantMismatch { requested: String, found: String },
    #[error("missing required setting {0}")]
    Missing(&'static str),
    #[error("gradient check failed for {0}")]
    GradCheckFailed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] sumgan_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 ok, 2 configuration or input problems, 3 numerical failures, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use sumgan_core::Error as E;
        match self {
            CliError::ConfigFile { .. }
            | CliError::Setting { .. }
            | CliError::UnknownVideo(_)
            | CliError::VariantMismatch { .. }
            | CliError::Missing(_)
            | CliError::Io { .. } => 2,
            CliError::GradCheckFailed(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) | E::Validation { .. } | E::Format { .. } | E::Ingestion(_) | E::Io { .. } => 2,
                E::NonFiniteLoss { .. } | E::Tensor(TensorError::NonFinite { .. }) => 3,
                _ => 1,
            },
        }
    }
}
