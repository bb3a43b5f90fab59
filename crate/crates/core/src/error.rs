use thiserror::Error;

/// Diagnostics attached to a time step whose nonlinear solve did not converge.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    /// Homotopy parameter at which the failing Newton solve was running.
    pub alpha: f64,
    /// Newton iteration index at the point of failure.
    pub iteration: usize,
    /// Infinity norm of the residual at the last accepted iterate.
    pub residual_norm: f64,
    pub reason: String,
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (alpha = {}, iteration = {}, residual = {:.3e})",
            self.reason, self.alpha, self.iteration, self.residual_norm
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("linear solver: {0}")]
    LinearSolver(String),
    #[error("step {step} failed: {failure}")]
    StepFailed { step: usize, failure: StepFailure },
    #[error("nonlinear solve failed: {0}")]
    Solve(StepFailure),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
