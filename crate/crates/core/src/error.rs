use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },

    #[error("label {label} at sample {index} is outside [0, {class_count})")]
    LabelOutOfRange {
        index: usize,
        label: i64,
        class_count: u32,
    },

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("invalid metadata trailer: {0}")]
    InvalidTrailer(String),

    #[error("feature kind mismatch: {0}")]
    KindMismatch(String),

    #[error("{what} = {value} is out of range {range}")]
    OutOfRange {
        what: &'static str,
        value: i64,
        range: String,
    },

    #[error("class {class} has no samples")]
    MissingClass { class: u32 },

    #[error("feature matrix has rank 0")]
    DegenerateFeatures,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mismatched feature sets: {0}")]
    MismatchedSets(String),

    #[error("evidence results were computed on different samples")]
    SampleMismatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("invalid prompt spec: {0}")]
    InvalidSpec(String),

    #[error("spectrum bin count mismatch: {left} vs {right}")]
    BinMismatch { left: usize, right: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("zero variance input")]
    ZeroVariance,

    #[error("covariance is singular")]
    SingularCovariance,

    #[error("non-finite logits at index {index}")]
    NonFiniteLogits { index: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical pipeline on otherwise valid input.
    ///
    /// Everything else is an input/validation problem; the CLI maps the two
    /// groups to distinct exit codes.
    pub fn is_compute(&self) -> bool {
        matches!(
            self,
            Error::DegenerateFeatures
                | Error::SingularCovariance
                | Error::ZeroVariance
                | Error::Numerical(_)
        )
    }
}
