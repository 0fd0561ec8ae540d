//! Error types shared across the toolkit.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for numerical, structural, and I/O failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A factorization or solve encountered a (numerically) rank-deficient matrix.
    #[error("rank-deficient matrix in {context}: |pivot| ratio {ratio:.3e} below threshold")]
    RankDeficient { context: &'static str, ratio: f64 },

    /// An iterative procedure failed to converge within its sweep/iteration cap.
    #[error("{context} did not converge within {limit} {unit}")]
    NoConvergence {
        context: &'static str,
        limit: usize,
        unit: &'static str,
    },

    /// A linear system was too ill-conditioned to solve reliably.
    #[error("ill-conditioned system in {context} (indicator {indicator:.3e})")]
    IllConditioned { context: &'static str, indicator: f64 },

    /// Operand shapes are incompatible.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// An iteration limit was reached before the requested tolerance.
    #[error("{context}: iteration limit {limit} reached (last residual measure {last:.3e})")]
    MaxIters {
        context: &'static str,
        limit: usize,
        last: f64,
    },

    /// An iterative solver's residual measure grew far beyond its best value.
    #[error("{context} diverged: residual measure grew to {grown:.3e} from best {best:.3e}")]
    Divergence {
        context: &'static str,
        grown: f64,
        best: f64,
    },

    /// A spectral interval required by a solver is missing or invalid.
    #[error("invalid spectral interval for {context}: [{lo:.3e}, {hi:.3e}]")]
    InvalidInterval { context: &'static str, lo: f64, hi: f64 },

    /// A stacking mode was asked of an instance family that does not support it.
    #[error("illegal stack request: {reason}")]
    IllegalStack { reason: String },

    /// The requested accuracy is outside the validity range of a bound.
    #[error("epsilon {eps} outside valid range (must be in (0, {max_eps}))")]
    EpsOutOfRange { eps: f64, max_eps: f64 },

    /// An argument value is structurally invalid (non-positive size, bad variant, ...).
    #[error("invalid argument: {reason}")]
    InvalidArg { reason: String },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file's contents do not match the expected on-disk format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    /// Shorthand for an [`Error::InvalidArg`].
    pub fn invalid_arg(reason: impl Into<String>) -> Self {
        Error::InvalidArg { reason: reason.into() }
    }

    /// Shorthand for a [`Error::DimensionMismatch`].
    pub fn dim(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
