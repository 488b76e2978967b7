use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error(transparent)]
    Core(#[from] audible_core::Error),
}

impl NnError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        NnError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn checkpoint(path: &Path, message: impl Into<String>) -> Self {
        NnError::Checkpoint {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
