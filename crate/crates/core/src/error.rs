use thiserror::Error;

/// Errors shared across the estimation pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("responses missing: simulate or load data before running inference")]
    MissingResponses,

    #[error("system matrix singular on the active set (smallest eigenvalue {min_eig:.6e})")]
    SingularSystem { min_eig: f64 },

    #[error(
        "degenerate coordinate {index}: diagonal curvature [B]_jj = {value:.6e} is not positive"
    )]
    DegenerateCoordinate { index: usize, value: f64 },

    #[error(
        "coordinate {index} sits in the zero-lock neighbourhood (|theta| = {value:.6e} <= eps = {eps:.6e}); lock it before reweighting"
    )]
    ZeroLockedCoordinate { index: usize, value: f64, eps: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("io: {0}")]
    Io(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
