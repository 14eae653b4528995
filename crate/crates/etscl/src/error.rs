use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    #[error("missing {what} checkpoint {}", path.display())]
    MissingCheckpoint { what: String, path: PathBuf },
    #[error(transparent)]
    Numerical(#[from] etscl_core::Error),
}

impl CliError {
    /// 1 usage, 2 input/output, 3 numerical or contract failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } | CliError::Format { .. } | CliError::MissingCheckpoint { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, line: usize, message: impl Into<String>) -> Self {
        CliError::Format { path: path.to_path_buf(), line, message: message.into() }
    }
}
