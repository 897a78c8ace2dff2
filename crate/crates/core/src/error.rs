use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("estimator undefined: kernel mixture vanishes at the played point {0}")]
    EstimatorUndefined(f64),
    #[error("infeasible region: {0}")]
    InfeasibleRegion(String),
    #[error("not enough samples: need at least {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("environment error: {0}")]
    Environment(String),
}

pub type Result<T> = std::result::Result<T, Error>;
