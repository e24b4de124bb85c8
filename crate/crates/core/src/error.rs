use thiserror::Error;

/// Errors raised across scene generation, feature building, channel
/// evaluation, training and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("could not place {requested} vehicles without overlap after {attempts} attempts")]
    PlacementFailure { requested: usize, attempts: usize },

    #[error("need at least 2 frames, got {0}")]
    InsufficientFrames(usize),

    #[error("vehicle {index} has {dimension} = {value} m above the normalization bound {bound} m")]
    BoundsViolation {
        index: usize,
        dimension: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("grid index {index:?} outside dims {dims:?}")]
    IndexOutOfRange { index: [usize; 3], dims: [usize; 3] },

    #[error("scene has no mobile station")]
    NoMs,

    #[error("no propagation path between RSU and MS")]
    NoPath,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },

    #[error("B = {b} outside 1..={max}")]
    BOutOfRange { b: usize, max: usize },

    #[error("all beam-pair gains are zero (outage sample)")]
    AllZeroGains,

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("self-consistency check failed: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
