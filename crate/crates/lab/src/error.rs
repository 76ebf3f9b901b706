use std::path::PathBuf;

use cmdp_lab_core::Error as CoreError;
use thiserror::Error;

pub type LabResult<T> = Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file; the message names the offending field.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        LabError::Format { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// 1 for usage and input problems, 2 for a failed verdict, 3 for
    /// numerical breakdown.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Verification(_) => 2,
            LabError::Core(e) => core_exit_code(e),
            _ => 1,
        }
    }
}

fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Numerical { .. } | CoreError::Convergence { .. } => 3,
        CoreError::Oracle { source, .. } => core_exit_code(source),
        _ => 1,
    }
}
