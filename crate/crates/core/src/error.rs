use thiserror::Error;

use crate::bayes_net::VariationalPosterior;

pub type Result<T> = std::result::Result<T, LfdError>;

#[derive(Debug, Error)]
pub enum LfdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("simulation diverged in context `{context}` at step {step}")]
    SimulationDiverged { context: String, step: usize },

    #[error("riccati iteration did not converge after {iterations} iterations")]
    RiccatiFailure { iterations: usize },

    #[error("trajectory of length {len} is shorter than window size {k}")]
    TooShortTrajectory { len: usize, k: usize },

    #[error("kernel matrix is ill-conditioned even with jitter {jitter:e}")]
    IllConditionedKernel { jitter: f64 },

    #[error("dataset of {n} points exceeds the GP cap of {cap}")]
    DatasetTooLarge { n: usize, cap: usize },

    /// Training produced a non-finite loss. Carries the last posterior whose
    /// loss was finite.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged {
        epoch: usize,
        last_finite: Box<VariationalPosterior>,
    },

    #[error("detector buffer is empty")]
    NotReady,

    #[error("malformed record: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LfdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LfdError::InvalidArgument(msg.into())
    }
}
