//! Errors of the file-handling and command layers, with the process exit
//! code each one maps to.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, AppError>;

/// Exit code for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code for bad input: arguments, configuration or data files.
pub const EXIT_USER: i32 = 1;
/// Exit code for a failure while computing or writing results.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{input}: row {row}: {message}")]
    Row {
        input: String,
        row: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: format {found} version {found_version}, expected {expected} version {expected_version}")]
    Schema {
        path: PathBuf,
        found: String,
        found_version: u32,
        expected: String,
        expected_version: u32,
    },
    #[error(transparent)]
    Model(#[from] epiphase_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AppError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use epiphase_core::Error as E;
        match self {
            AppError::Write { .. } | AppError::Runtime(_) => EXIT_RUNTIME,
            AppError::Model(E::SamplerFailure(_) | E::TruncationOverflow { .. }) => EXIT_RUNTIME,
            _ => EXIT_USER,
        }
    }
}
