use alloc::string::String;
use alloc::vec::Vec;

/// Failure reported by an embedding provider.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    /// The provider could not be reached; retrying later may succeed.
    #[error("embedding provider unavailable: {0}")]
    Unavailable(String),
    /// The provider answered but rejected the request.
    #[error("embedding provider failed: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("direction outside the reflectance domain: {0}")]
    Domain(&'static str),
    #[error("{what} = {value} is out of range")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("template error: missing {missing:?}, duplicate {duplicate:?}, unknown {unknown:?}")]
    Template {
        missing: Vec<String>,
        duplicate: Vec<String>,
        unknown: Vec<String>,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("vector database is empty")]
    EmptyDatabase,
    #[error("k = {k} out of range for database of size {len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("payload width mismatch: expected {expected}, found {found}")]
    PayloadShape { expected: usize, found: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("forward cache is stale (weights changed since the forward pass)")]
    StaleCache,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("annotation of seed {seed} failed: {source}")]
    Annotation { seed: u64, source: ProviderError },
    #[error("black-box loss failed at latent coordinate {coordinate}: {source}")]
    Probe {
        coordinate: usize,
        source: ProviderError,
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate (zero) variance")]
    DegenerateVariance,
    #[error("word not in vector table: {0}")]
    MissingWord(String),
    #[error("not enough ground-truth pairs: need {needed}, have {have}")]
    InsufficientPairs { needed: usize, have: usize },
    #[error("training diverged at step {step}: non-finite loss or gradient")]
    Diverged { step: u64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
