use thiserror::Error;

/// Errors raised by the toolkit. Certificate failures are not errors: they are
/// reported through [`crate::certify::Certificate`] verdicts.
#[derive(Debug, Error)]
pub enum FpkError {
    #[error("grid too coarse: {actual} quadrature nodes, at least {required} required")]
    GridTooCoarse { required: usize, actual: usize },

    #[error("unsupported norm selector: {0}")]
    UnsupportedNorm(String),

    #[error("unsupported drift family for this operation: {0}")]
    UnsupportedFamily(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("diffusion matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("diffusion matrix is not nonnegative (smallest eigenvalue {0:e})")]
    NotNonnegative(f64),

    #[error("requested size {requested} exceeds the declared maximum {max}")]
    SizeExceeded { requested: usize, max: usize },

    #[error("diffusion is singular (smallest eigenvalue {0:e}); condition (B) weighting needs A_N > 0")]
    SingularDiffusion(f64),

    #[error("blow-up at step {step}: particle {particle} left the guard radius {radius:e}")]
    BlowUp {
        step: u64,
        particle: usize,
        radius: f64,
    },

    #[error("CFL violation: dt = {dt:e} exceeds the stable limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-monotone configuration rejected: {0}")]
    NonMonotone(String),

    #[error("Lyapunov function family not admissible here: {0}")]
    WrongVFamily(String),

    #[error("no growth envelope up to V^{max_power} found for coordinate {coordinate}")]
    EnvelopeNotFound { coordinate: usize, max_power: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FpkError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> FpkError {
    FpkError::Invalid(msg.into())
}
