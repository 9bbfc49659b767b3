use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input")]
    EmptyInput,

    #[error("direction undefined: {0}")]
    UndefinedDirection(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sites {0} and {1} coincide; correlation matrix is singular")]
    CoincidentSites(usize, usize),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("matrix too ill-conditioned (estimated condition number {0:e})")]
    IllConditioned(f64),

    #[error("non-finite log-posterior at the initial state (parameter `{0}`)")]
    Initialization(String),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::EmptyInput | Error::DimensionMismatch { .. }
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
