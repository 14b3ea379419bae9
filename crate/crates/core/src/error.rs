use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(&'static str),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),

    #[error("k = {k} must be smaller than the number of points ({n})")]
    KTooLarge { k: usize, n: usize },

    #[error("degenerate 6D rotation seed")]
    DegenerateRotationSeed,

    #[error("timestep {t} outside [0, {max}]")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("alpha is zero at t = {0}; the clean estimate is undefined")]
    AlphaZero(usize),

    #[error("empty timestep range")]
    EmptyRange,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("remote denoiser failure: {0}")]
    RemoteFailure(String),

    #[error("timed out waiting for the denoiser")]
    Timeout,

    #[error("cannot vote over an empty set of predictions")]
    EmptyVoteSet,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("corruption left only {0} points")]
    EmptyResult(usize),

    #[error("class {0} would receive no instances")]
    InfeasibleImbalance(usize),

    #[error("class {0} has no true instances")]
    UndefinedClassRecall(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
