use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to locate the
/// offending input (byte offsets for file formats, row indices for kernels).
#[derive(Debug, Error)]
pub enum Error {
    #[error("idx file {path}: {reason} (byte offset {offset})")]
    IdxFormat {
        path: String,
        reason: String,
        offset: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("label {0} outside the 10-class range 0..=9")]
    LabelOutOfRange(u8),

    #[error("boolean domain dimension {0} outside 1..=16")]
    BadBooleanDimension(usize),

    #[error("dataset invariant violated: {0}")]
    DatasetInvariant(String),

    #[error("function length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("frequency tables disagree on provenance: {0:?} vs {1:?}")]
    ProvenanceMismatch(String, String),

    #[error("joint function set is empty; correlation undefined")]
    EmptyJointSet,

    #[error("frequency table is empty")]
    EmptyTable,

    #[error("invalid network configuration: {0}")]
    BadNetConfig(String),

    #[error("invalid optimiser configuration: {0}")]
    BadOptimiserConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("kernel input row {row} has zero norm with sigma_b = 0; angle undefined")]
    ZeroNormRow { row: usize },

    #[error("matrix factorisation failed after jitter escalation up to {max_jitter:e}")]
    FactorisationFailed { max_jitter: f64 },

    #[error("all {0} training runs were discarded before reaching zero error")]
    AllRunsDiscarded(u64),

    #[error("no parameter sample was accepted out of {0}")]
    NoAcceptedSamples(u64),

    #[error("expectation propagation did not converge within {sweeps} sweeps")]
    EpNotConverged { sweeps: usize },

    #[error("chernoff bound needs epsilon >= mean error; got epsilon {epsilon}, mean {mean}")]
    ChernoffRegime { epsilon: f64, mean: f64 },

    #[error("invalid experiment configuration: {0}")]
    BadExperimentConfig(String),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
