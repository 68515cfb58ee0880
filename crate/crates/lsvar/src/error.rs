//! Error type shared by all modules.

use crate::estimation::FitResult;

/// Errors produced by model construction, estimation, and detection.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input validation failed (dimensions, ranges, non-finite values).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A transition matrix has spectral radius at or above one.
    #[error("segment {segment} is unstable: spectral radius {spectral_radius:.6} >= 1")]
    UnstableSegment { segment: usize, spectral_radius: f64 },

    /// An interval does not contain enough transition pairs to fit a model.
    #[error("interval [{start}, {end}) has {pairs} transition pairs, need at least {required}")]
    IntervalTooShort {
        start: usize,
        end: usize,
        pairs: usize,
        required: usize,
    },

    /// The solver objective increased for too many consecutive iterations.
    /// Carries the best iterate seen so far.
    #[error("solver diverged after {} iterations", partial.iterations)]
    Divergence { partial: Box<FitResult> },

    /// The information ratio is undefined because the sparse component is zero.
    #[error("information ratio undefined: sparse component is identically zero")]
    UndefinedRatio,

    /// Every candidate split failed, so no change point can be reported.
    #[error("detection failed: {0}")]
    DetectionFailed(String),

    /// Requested scenario name is not in the catalog.
    #[error("unknown scenario \"{0}\"")]
    UnknownScenario(String),

    /// A metric is undefined for the given inputs.
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// Numerical linear algebra failure (SVD/eigen on non-finite input).
    #[error("linear algebra failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
