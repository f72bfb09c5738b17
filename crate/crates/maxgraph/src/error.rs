use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A field stopped being spacelike where the operation requires it.
    #[error("non-spacelike field: margin {margin:.3e} at node {node}")]
    NonSpacelike { node: usize, margin: f64 },

    /// Boundary data is not (discretely) acausal.
    #[error("acausality violation: mu0 = {mu0:.6e} <= 0")]
    Acausal { mu0: f64 },

    /// Newton or homotopy did not reach the residual target.
    #[error("solver did not converge: {detail} (last good t = {last_t}, residual_inf = {residual_inf:.3e})")]
    Nonconvergence {
        last_t: f64,
        residual_inf: f64,
        detail: String,
    },

    /// No slope parameter solves the barrier tangency equation for this eps.
    #[error("infeasible barrier fit: a = {a:.6} >= f'(eps) = {fprime_eps:.6}; choose a smaller eps")]
    InfeasibleFit { a: f64, fprime_eps: f64 },

    /// Inner linear solve stalled.
    #[error("linear solve failed after {iterations} iterations, residual {residual:.3e}")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
