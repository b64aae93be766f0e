use thiserror::Error;

/// Errors raised by grids, solvers and experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid axis: {0}")]
    InvalidAxis(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("window radius {radius} exceeds the usable fast half-width {limit}")]
    WindowTooLarge { radius: f64, limit: f64 },

    #[error("grid or shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("CFL violation ({binding} constraint): dt = {dt:e} exceeds the stable bound {bound:e}")]
    Cfl {
        binding: String,
        dt: f64,
        bound: f64,
    },

    #[error("non-finite value at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },

    #[error("negative density {value:e} at step {step}")]
    NegativeDensity { step: usize, value: f64 },

    #[error("mass mismatch: {0}")]
    MassMismatch(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("scaling maps outside the source domain: {0}")]
    OutOfDomain(String),

    #[error("fit rejected: {0}")]
    Fit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the experiment runner: 2 config, 3 numerical failure,
    /// 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } => 4,
            Error::Config(_)
            | Error::InvalidAxis(_)
            | Error::InvalidGrid(_)
            | Error::InvalidArgument(_)
            | Error::WindowTooLarge { .. }
            | Error::Cfl { .. } => 2,
            _ => 3,
        }
    }
}
