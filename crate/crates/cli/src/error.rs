use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Front-end failures. Each variant maps to its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("column `{column}` not found in {path}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}, row {row}: response `{value}` is not an integer")]
    NonIntegerResponse { path: PathBuf, row: usize, value: String },

    #[error("{path}, row {row}: negative count {value}")]
    NegativeCount { path: PathBuf, row: usize, value: String },

    #[error("{path}, row {row}, column `{column}`: `{value}` is not a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("design matrix has rank {rank} < {p} columns")]
    RankDeficient { rank: usize, p: usize },

    #[error(transparent)]
    Model(#[from] cmpglm::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Schema { .. } => 3,
            CliError::MissingColumn { .. } => 4,
            CliError::NonIntegerResponse { .. } => 5,
            CliError::NegativeCount { .. } => 6,
            CliError::NonNumeric { .. } => 7,
            CliError::RankDeficient { .. } => 8,
            CliError::Model(_) => 9,
            CliError::Io { .. } => 10,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
