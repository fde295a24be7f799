use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {n} exceeds the supported maximum {max}")]
    DimensionTooLarge { n: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point lies on the boundary of the cube at coordinate {coord}")]
    BoundaryPoint { coord: usize },

    #[error("harmonic extension of the density vanishes at the requested point")]
    ZeroMass,

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("size cap exceeded: {0}")]
    CapExceeded(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
