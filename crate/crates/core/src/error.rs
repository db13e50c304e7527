use thiserror::Error;

use crate::matcore::MatError;
use crate::runio::ConfigError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Matrix(#[from] MatError),

    #[error("{what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} is not positive semidefinite")]
    NotPositiveSemidefinite { what: &'static str },

    #[error("innovation covariance is numerically singular: {0}")]
    InnovationCovariance(#[source] MatError),

    #[error("state transition is not invertible (condition estimate {condition:e})")]
    NonInvertibleTransition { condition: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("position slice {start}..{end} does not fit a state of dimension {n}")]
    SliceOutOfBounds { start: usize, end: usize, n: usize },

    #[error("delayed measurement without an active anchor epoch")]
    MissingAnchor,

    #[error("information matrix is singular, trajectory is unobservable: {0}")]
    Unobservable(#[source] MatError),

    #[error("invalid trajectory problem: {0}")]
    InvalidProblem(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("epoch {epoch}: {source}")]
    AtEpoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_epoch(self, epoch: usize) -> Self {
        Error::AtEpoch {
            epoch,
            source: Box::new(self),
        }
    }
}
