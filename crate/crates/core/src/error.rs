use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("Gram matrix is ill-conditioned (condition estimate {0:.3e})")]
    IllConditioned(f64),
    #[error("non-finite values encountered at iteration {0}")]
    NonFinite(usize),
    #[error("symmetric eigendecomposition did not converge")]
    EigenFailure,
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("no candidate passed certification: {0}")]
    NoCertificate(String),
    #[error("enumeration size {size} exceeds the cap of {cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("trajectory: {0}")]
    Trajectory(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
