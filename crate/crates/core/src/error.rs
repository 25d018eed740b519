use thiserror::Error;

/// Errors produced across the crate.
///
/// Variants are grouped so the CLI can map them onto exit codes: instance and
/// configuration problems, schema problems, and phase failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("instance error: {0}")]
    Instance(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("non-termination after {trajectories} trajectories (cap {cap}): {detail}")]
    NonTermination {
        trajectories: u64,
        cap: u64,
        detail: String,
    },

    #[error("recovery failed at step {step}: residual {residual:.3e} ({reason})")]
    Recovery {
        step: usize,
        residual: f64,
        reason: String,
    },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("grammian deficient at step {step}: lambda_min {lambda_min:.4e} < {threshold:.4e} along {direction:?}")]
    Deficient {
        step: usize,
        lambda_min: f64,
        threshold: f64,
        direction: Vec<f64>,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("fit failure: loss {loss:.3e} > tol {tol:.3e} after {restarts} restarts")]
    FitFailure { loss: f64, tol: f64, restarts: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Instance(_)
            | Error::Generation(_)
            | Error::Precondition(_)
            | Error::Degenerate(_)
            | Error::Contract(_) => 2,
            Error::Schema(_) | Error::Json(_) => 3,
            Error::Io(_) => 1,
            _ => 4,
        }
    }
}
