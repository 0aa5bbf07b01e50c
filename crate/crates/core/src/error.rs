use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum DdsError {
    #[error("argument {value} outside the admissible domain: {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("Phi' - 1 does not change sign on the sampled range")]
    NoCrossing,

    #[error("could not bracket Phi^-1 for value {0}")]
    InversionFailure(f64),

    #[error("tabulated decomposition residual {residual:.3e} exceeds {limit:.1e}")]
    ResolutionError { residual: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error("linearization coefficient L_B <= 0 (min {0:.3e})")]
    DegenerateCoefficient(f64),

    #[error("linear solver failed, achieved relative residual {residual:.3e}")]
    SolverFailure { residual: f64 },

    #[error("operation not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DdsError>;
