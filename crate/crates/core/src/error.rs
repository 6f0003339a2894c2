use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("algebra is not nilpotent within class bound {bound}")]
    NotNilpotent { bound: usize },

    #[error("nilpotency class {0} is not supported (maximum 4)")]
    ClassUnsupported(usize),

    #[error("{check} residual {residual:e} exceeds tolerance {tolerance:e}")]
    Validation {
        check: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("linear map does not preserve the lower central series (residual {0:e})")]
    SeriesNotPreserved(f64),

    #[error("numerically defective eigenvalue clustering: {0}")]
    DefectiveClustering(String),

    #[error("operator is not hyperbolic: eigenvalue with real part {0:e}")]
    NotHyperbolic(f64),

    #[error("kernel subspace is not invariant (residual {0:e})")]
    KernelNotInvariant(f64),

    #[error("invalid decomposition data: {0}")]
    InvalidDecomposition(String),

    #[error("no recurrence within epsilon found before time budget {0}")]
    BudgetExceeded(f64),

    #[error("control value {0:?} lies outside the control range")]
    ControlOutOfRange(Vec<f64>),

    #[error("control function is undefined at time {0}")]
    ControlUndefined(f64),

    #[error("tau too small at level {level}: kappa*exp(-tau*mu) = {factor} >= 1, the bound needs kappa_i e^(-tau mu_i) < 1")]
    TauTooSmall { level: usize, factor: f64 },

    #[error("empty window")]
    EmptyWindow,

    #[error("no controls in the control family")]
    NoControls,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(check: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Error::Validation {
            check: check.into(),
            residual,
            tolerance,
        }
    }

    /// Process exit code for this error: 2 for validation-type failures.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

pub type Result<T> = std::result::Result<T, Error>;
