use std::path::PathBuf;

use mrc_core::Error as CoreError;

pub type AppResult<T> = Result<T, AppError>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Io { .. } | AppError::Image { .. } | AppError::Data(_) => 3,
            AppError::Core(e) => match e {
                CoreError::Config(_) => 2,
                CoreError::Structure(_) | CoreError::Detection(_) | CoreError::Decode(_) | CoreError::Evaluation(_) => 3,
                CoreError::Fit(_)
                | CoreError::TrainingFailure(_)
                | CoreError::PredictionFailure(_)
                | CoreError::WarpFailure
                | CoreError::NotPositiveDefinite { .. }
                | CoreError::Optimization(_) => 4,
            },
        }
    }
}
