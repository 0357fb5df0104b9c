use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported basis order {0}, expected 1, 2 or 3")]
    UnsupportedOrder(usize),
    #[error("invalid cholesky factor: {0}")]
    InvalidCholesky(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid label {0}, expected 0 or 1")]
    InvalidLabel(f64),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("empty mini-batch")]
    EmptyBatch,
    #[error("stale forward cache: {0}")]
    StaleCache(String),
    #[error("step size {eta} exceeds the admissible bound {bound}")]
    StepSizeTooLarge { eta: f64, bound: f64 },
    #[error("assumption not satisfied: {0}")]
    Assumption(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
