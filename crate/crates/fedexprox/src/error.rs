//! Crate-wide error type.

/// Errors surfaced by the simulator and its numerical kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An operand has the wrong dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Cholesky factorization hit a nonpositive pivot beyond tolerance.
    #[error("matrix is not positive definite: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// Power iteration exceeded its iteration cap.
    #[error("eigenvalue iteration did not converge within {cap} iterations")]
    NoConvergence { cap: usize },

    /// Problem generation produced a non-strongly-convex average objective.
    #[error("degenerate spectrum: average curvature has minimum eigenvalue {mu:e}")]
    DegenerateSpectrum { mu: f64 },

    /// A local proximal solver ran past its certified iteration bound.
    #[error("local solver exceeded its iteration cap of {cap}")]
    IterationCapExceeded { cap: usize },

    /// The requested relative inexactness violates the regime's admissibility bound.
    #[error("inexactness eps2 = {eps2} not admissible for {regime}: requires eps2 < {bound:e}")]
    InadmissibleInexactness {
        eps2: f64,
        regime: &'static str,
        bound: f64,
    },

    /// An adaptive extrapolation rule hit a zero denominator.
    #[error("degenerate adaptive step at iteration {iter}: zero denominator")]
    DegenerateStep { iter: usize },

    /// The iterate left the divergence guard region.
    #[error("divergence detected at iteration {iter}: squared distance {sq_dist:e}")]
    DivergenceDetected { iter: usize, sq_dist: f64 },

    /// A configuration value is out of its documented range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
