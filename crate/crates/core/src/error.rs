use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library. Variants carry the offending value so the
/// CLI can print a useful remediation hint.
#[derive(Debug, Error)]
pub enum Error {
    #[error("covariate dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter vector has {got} entries but the layout declares {expected}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("scale parameter `{name}` must be positive, got {value}")]
    NonPositiveScale { name: String, value: f64 },

    #[error("datum carries no group index but the hierarchical family requires one")]
    MissingGroup,

    #[error("unknown group {group}: training data covers groups 1..={groups}")]
    UnknownGroup { group: usize, groups: usize },

    #[error("alpha must lie strictly inside (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("regression grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("classification outcomes use the fixed {{0, 1}} grid; a regression grid cannot be derived")]
    GridKindMismatch,

    #[error("operation requires a regression family")]
    RegressionRequired,

    #[error("operation requires the logistic family")]
    LogisticRequired,

    #[error(
        "all importance weights vanished at grid value y = {y}; \
         no posterior draw carries mass there (widen the grid or raise T)"
    )]
    DegenerateWeights { y: f64 },

    #[error("draws file {path}: {msg}")]
    DrawsFormat { path: PathBuf, msg: String },

    #[error("draws row {row}: parameter `{name}` = {value} violates its positivity constraint")]
    DrawsConstraint { row: usize, name: String, value: f64 },

    #[error("dataset: {0}")]
    DataFormat(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite log-posterior at the sampler initialization point")]
    SamplerInit,

    #[error("prior covariance is not symmetric positive definite")]
    SingularPriorCovariance,

    #[error("benchmark repeat {repeat} failed (reproduce with seed {seed}): {source}")]
    RepeatFailed {
        repeat: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the failure originates from importance-weight degeneracy,
    /// possibly wrapped by the benchmark harness.
    pub fn is_degenerate_weights(&self) -> bool {
        match self {
            Error::DegenerateWeights { .. } => true,
            Error::RepeatFailed { source, .. } => source.is_degenerate_weights(),
            _ => false,
        }
    }

    /// True when the failure comes from the sampler itself.
    pub fn is_sampler_failure(&self) -> bool {
        match self {
            Error::SamplerInit => true,
            Error::RepeatFailed { source, .. } => source.is_sampler_failure(),
            _ => false,
        }
    }
}
