use thiserror::Error;

/// Error type shared across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("horizon {horizon} must be smaller than the series length {len}")]
    InvalidHorizon { horizon: usize, len: usize },

    #[error("test_hours {test_hours} must be smaller than the dataset length {len}")]
    InvalidSplit { test_hours: usize, len: usize },

    #[error("degenerate normalizer: {0}")]
    DegenerateNormalizer(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("no observed data: {0}")]
    NoObservedData(String),

    #[error("insufficient data for imputation: {0}")]
    InsufficientData(String),

    #[error("matrix still contains missing cells")]
    IncompleteMatrix,

    #[error("no loss-contributing positions in batch")]
    EmptyLoss,

    #[error("window length {window} exceeds dataset length {len}")]
    InvalidWindow { window: usize, len: usize },

    #[error("series does not cover an integer number of calendar years")]
    PartialYear,

    #[error("actual values for year {year} contain missing entries")]
    IncompleteActuals { year: i32 },

    #[error("actual AADT must be positive, got {0}")]
    InvalidActual(f64),

    #[error("malformed series at line {line}: {reason}")]
    MalformedSeries { line: usize, reason: String },

    #[error("zero volume at line {line}: zeros are reserved for the masking value")]
    ZeroVolume { line: usize },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code class: 2 for data errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericDomain(_) | Error::EmptyLoss | Error::DegenerateNormalizer(_) => 3,
            Error::InvalidConfig(_) => 1,
            _ => 2,
        }
    }
}
