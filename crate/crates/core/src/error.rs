//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KanError>;

#[derive(Debug, Error)]
pub enum KanError {
    #[error("invalid grid range: min {min} must be below max {max}")]
    InvalidRange { min: f64, max: f64 },
    #[error("grid must have at least one interval")]
    InvalidIntervals,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("forward cache does not match model or gradient batch: {0}")]
    CacheMismatch(String),
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model format version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),

    #[error("label column '{0}' not found in header")]
    MissingLabelColumn(String),
    #[error("cannot parse cell '{value}' at row {row}, column '{column}'")]
    UnparseableCell { row: usize, column: String, value: String },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("label '{0}' is not covered by the label mapping")]
    UnmappedLabel(String),
    #[error("dataset contains a single class")]
    SingleClass,
    #[error("test fraction {0} outside (0, 1)")]
    FractionOutOfRange(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature '{0}' has no non-missing values")]
    AllMissingFeature(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("labels contain no positive samples")]
    NoPositives,
    #[error("labels are constant")]
    ConstantLabels,
    #[error("sweep step {0} outside (0, 1)")]
    InvalidStep(f64),
    #[error("invalid batch size {0}")]
    InvalidBatchSize(usize),
}

impl KanError {
    /// Stable machine-readable code used by the CLI on failure.
    pub fn code(&self) -> &'static str {
        use KanError::*;
        match self {
            Io { .. } => "E_IO",
            VersionMismatch { .. } | CorruptFile(_) => "E_MODEL_FILE",
            MissingLabelColumn(_) | UnparseableCell { .. } | Csv(_) => "E_PARSE",
            SchemaMismatch(_) | ShapeMismatch(_) | LengthMismatch { .. } | CacheMismatch(_) => {
                "E_SCHEMA"
            }
            InvalidRange { .. } | InvalidIntervals | InvalidConfig(_) | InvalidStep(_)
            | InvalidBatchSize(_) | FractionOutOfRange(_) => "E_CONFIG",
            _ => "E_DATA",
        }
    }

    /// True for failures caused by the environment rather than by the inputs' content.
    pub fn is_environmental(&self) -> bool {
        matches!(self, KanError::Io { .. } | KanError::VersionMismatch { .. } | KanError::CorruptFile(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KanError::Io { path: path.into(), source }
    }
}
