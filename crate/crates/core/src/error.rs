use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {field}: expected {expected}, found {found}")]
    BadMagic {
        field: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated file: {field} needs {needed} bytes, {available} available")]
    TruncatedFile {
        field: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label {value} at position {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, value: u8 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("freeze plan selects no neurons in hidden layer {layer}")]
    EmptySelection { layer: usize },

    #[error("column {column} contains a non-finite value")]
    NonFiniteValue { column: usize },

    #[error("column {column} is constant")]
    ConstantColumn { column: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("submatrix over columns {subset:?} is not positive definite")]
    SingularSubmatrix { subset: Vec<usize> },

    #[error("invalid subset {subset:?}: {reason}")]
    InvalidSubset { subset: Vec<usize>, reason: String },

    #[error("degenerate class {class}: {reason}")]
    DegenerateClass { class: i64, reason: String },

    #[error("k = {k} exceeds the exhaustive-search ceiling {ceiling}")]
    KTooLarge { k: usize, ceiling: usize },

    #[error("no candidates left to extend a multiplet of size {k} over {width} neurons")]
    NoCandidates { k: usize, width: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("malformed {format} file: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the input files rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::TruncatedFile { .. }
                | Error::DimensionMismatch { .. }
                | Error::LabelOutOfRange { .. }
                | Error::EmptyDataset
                | Error::Format { .. }
                | Error::Csv(_)
                | Error::EmptyInput
        )
    }

    /// True for estimator or optimizer failures (singular covariance, divergence, ...).
    pub fn is_numerical_error(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. }
                | Error::ConstantColumn { .. }
                | Error::NonFiniteValue { .. }
                | Error::SingularSubmatrix { .. }
                | Error::DegenerateClass { .. }
                | Error::TooFewSamples { .. }
        )
    }
}
