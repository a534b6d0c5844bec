use thiserror::Error;

/// Errors raised by the homogenization pipeline.
///
/// Every numerical failure carries the residual or bound it actually achieved.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// Declared coefficient bounds are inconsistent with the formula.
    #[error("specification error: {0}")]
    Specification(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("quadrature did not converge: achieved error estimate {achieved:e}")]
    Quadrature { achieved: f64 },

    #[error("lattice sum not converged after {shells} shells: tail bound {tail_bound:e}")]
    Truncation { shells: usize, tail_bound: f64 },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("discretization failure: {0}")]
    Discretization(String),

    #[error("unsolvable system: solvability residual {residual:e} exceeds {tolerance:e}")]
    Unsolvable { residual: f64, tolerance: f64 },

    #[error("time stepping became unstable at t = {time}; reduce dt_safety")]
    Instability { time: f64 },

    #[error("perturbation step {step} makes the kernel negative (min value {min_value:e})")]
    StepTooLarge { step: f64, min_value: f64 },

    #[error("kernel symmetry violated: solvability residual {residual:e}")]
    SymmetryViolation { residual: f64 },

    #[error("oracle mismatch in {field}: discrepancy {discrepancy:e}")]
    OracleMismatch { field: String, discrepancy: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the CLI: 2 config, 3 convergence, 4 oracle mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Specification(_)
            | Error::Input(_)
            | Error::Capability(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::OracleMismatch { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
