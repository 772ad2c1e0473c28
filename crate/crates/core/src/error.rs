use thiserror::Error;

/// Errors raised by the synthesis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("integration diverged (non-finite state)")]
    IntegrationDiverged,
    #[error("linearization failed at step {step}")]
    LinearizationFailed { step: usize },
    #[error("gain recovery failed at diagonal block {block}")]
    GainRecoveryFailed { block: usize },
    #[error("control Riccati recursion singular at step {step}")]
    RiccatiSingular { step: usize },
    #[error("Kalman innovation matrix singular at step {step}")]
    KalmanSingular { step: usize },
    #[error("dense oracle failed: {0}")]
    OracleFailed(String),
    #[error("problem too large for brute-force oracle: {size} > {limit}")]
    OracleTooLarge { size: usize, limit: usize },
    #[error("negative envelope value {value} at step {step}")]
    InvalidEnvelope { step: usize, value: f64 },
    #[error("QP hit the iteration cap")]
    QpMaxIter,
    #[error("QP is infeasible")]
    QpInfeasible,
    #[error("QP solver failure: {0}")]
    QpFailed(String),
    #[error("synthesis infeasible at iteration {iteration}: {reason}")]
    SynthesisInfeasible { iteration: usize, reason: String },
    #[error("initial guess failed: {0}")]
    InitialGuessFailed(String),
    #[error("envelope fit is unbounded")]
    FitUnbounded,
    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },
    #[error("invalid problem spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for malformed user input, false for numerical failures.
    pub fn is_user_error(&self) -> bool {
        matches!(self, Error::InvalidSpec(_) | Error::Json(_) | Error::Shape(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
