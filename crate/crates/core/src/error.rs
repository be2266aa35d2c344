use thiserror::Error;

/// Errors produced across the estimation, reachability and planning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value function did not converge after {sweeps} sweeps (max update {max_update:.3e})")]
    HjbNotConverged { sweeps: usize, max_update: f64 },

    #[error("state ({x1:.4}, {x2:.4}) lies outside the value-function domain")]
    OutOfDomain { x1: f64, x2: f64 },

    #[error("state is not reachable under the value function")]
    Unreachable,

    #[error("trajectory extraction did not reach the target within {budget:.4} time units")]
    ExtractionFailed { budget: f64 },

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("optimizer did not converge: gradient norm {grad_norm:.3e} after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        objective_trace: Vec<f64>,
    },

    #[error("all posterior weights underflowed")]
    WeightUnderflow,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the error, possibly wrapped in a stage, signals an infeasible plan.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible(_) | Error::Unreachable | Error::WeightUnderflow => true,
            Error::Stage { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Json(_) | Error::InvalidArgument(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
