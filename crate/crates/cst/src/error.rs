use std::path::PathBuf;

use cst_core::CstError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CstError),
}

pub type AppResult<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AppError::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 2 usage, 3 data or IO, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Io { .. } | AppError::Data { .. } => 3,
            AppError::Core(e) if e.is_numerical() => 4,
            AppError::Core(
                CstError::InvalidParameter(_)
                | CstError::InvalidScaleCount(_)
                | CstError::InvalidK { .. },
            ) => 2,
            AppError::Core(_) => 3,
        }
    }
}
