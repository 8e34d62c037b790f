use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
///
/// The variants are grouped so that front ends can map them onto exit codes:
/// data problems, configuration problems and everything else.
#[derive(Debug, Error)]
pub enum LamaError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Csv(String),
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("target column `{0}` not found")]
    MissingTarget(String),
    #[error("target column `{column}` has {count} missing values")]
    MissingTargetValues { column: String, count: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("column mismatch: {0}")]
    ColumnMismatch(String),
    #[error("length mismatch: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("time budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("artifact format version {found} is not supported (expected {expected})")]
    ArtifactVersion { found: u32, expected: u32 },
    #[error("artifact error: {0}")]
    Artifact(String),
}

impl LamaError {
    /// True for errors caused by the input data rather than by configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            LamaError::Csv(_)
                | LamaError::RaggedRow { .. }
                | LamaError::MissingTarget(_)
                | LamaError::MissingTargetValues { .. }
                | LamaError::DuplicateColumn(_)
                | LamaError::InvalidTarget(_)
                | LamaError::ColumnMismatch(_)
                | LamaError::LengthMismatch { .. }
                | LamaError::InvalidInput(_)
                | LamaError::Split(_)
                | LamaError::Io { .. }
        )
    }

    /// True for errors caused by configuration or artifact compatibility.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            LamaError::Config(_) | LamaError::ArtifactVersion { .. } | LamaError::Artifact(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, LamaError>;
