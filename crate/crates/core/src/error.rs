use thiserror::Error;

#[derive(Debug, Error)]
pub enum MrcError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Requested truncation degree cannot be resolved by the quadrature.
    #[error("quadrature of degree {degree} cannot resolve degree-{ell} expansion (needs >= {needed})")]
    Aliasing { degree: usize, ell: usize, needed: usize },

    #[error("least-squares system is empty")]
    EmptySystem,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MrcError>;

pub(crate) fn domain(msg: impl Into<String>) -> MrcError {
    MrcError::Domain(msg.into())
}
