use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped by the CLI exit code they map to (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty set: {0}")]
    EmptySet(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sensitive group {group} has no samples")]
    MissingGroup { group: u8 },

    #[error("sensitive group {group} has no positive-label samples")]
    NoPositives { group: u8 },

    #[error("adversarial crafting needs a nonzero weight vector")]
    ZeroWeights,

    #[error("matrix is not positive definite (smallest eigenvalue estimate {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("no convergence after {iters} iterations (gradient norm {grad_norm:.3e})")]
    NoConvergence { iters: usize, grad_norm: f64 },

    #[error("model is not a stationary point (gradient norm {grad_norm:.3e} > {tol:.3e})")]
    NotTrained { grad_norm: f64, tol: f64 },

    #[error("weights were computed for a different model snapshot")]
    StaleWeights,

    #[error("QP solver hit its iteration cap ({iters}); best KKT residual {residual:.3e}")]
    QpIterationCap { iters: usize, residual: f64 },

    #[error("gradient rounds diverged at round {round}: utility loss {loss:.3e} > 10x initial {initial:.3e}")]
    Diverged { round: usize, loss: f64, initial: f64 },

    #[error("leave-one-out cap exceeded: n = {n} > {cap} (pass an override to run anyway)")]
    LooCapExceeded { n: usize, cap: usize },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}, column `{column}`: {message}")]
    BadValue {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{0}: file has no data rows")]
    EmptyFile(PathBuf),

    #[error("{path}: unsupported schema `{found}` (expected `{expected}`)")]
    SchemaVersion {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("split `{0}` would be empty")]
    EmptySplit(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error("step `{step}` failed: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::LooCapExceeded { .. } => 1,
            Error::NotPositiveDefinite { .. }
            | Error::NoConvergence { .. }
            | Error::NotTrained { .. }
            | Error::QpIterationCap { .. }
            | Error::Diverged { .. } => 3,
            Error::Step { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    pub(crate) fn in_step(step: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Step {
            step,
            source: Box::new(e),
        }
    }
}
