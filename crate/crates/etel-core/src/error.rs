//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures raised by models, solvers, statistics and the Monte Carlo engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A model returned NaN or an infinite value.
    #[error("model produced a non-finite value at observation {row}")]
    NonFiniteModelOutput { row: usize },

    /// Shapes of inputs disagree.
    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },

    /// The misspecification parameter of the builtin model is not positive.
    #[error("invalid delta {0}: must be finite and > 0")]
    InvalidDelta(f64),

    /// Zero is not (numerically) inside the convex hull of the moment rows.
    #[error("hull failure: {0}")]
    HullFailure(String),

    /// A moment second-moment matrix is numerically singular.
    #[error("singular moment matrix: {0}")]
    SingularMoments(String),

    /// Every probed starting point of the outer search was infeasible.
    #[error("all starting points failed the inner solve")]
    AllStartsFailed,

    /// The outer optimizer exhausted its iteration budget.
    #[error("outer optimizer did not converge after {iterations} iterations")]
    OuterNoConvergence { iterations: usize },

    /// Two weight vectors have different lengths.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// A probability weight is negative or non-finite.
    #[error("weight {index} is not a valid probability ({value})")]
    NonpositiveWeight { index: usize, value: f64 },

    /// Argument outside the domain of a function.
    #[error("domain error: {0}")]
    DomainError(String),

    /// Invalid order parameter for an (h, phi) family.
    #[error("invalid order: {0}")]
    InvalidOrder(String),

    /// The tilting problem is infeasible at the null value.
    #[error("null value infeasible: {0}")]
    NullInfeasible(String),

    /// The Jacobian mean does not have full column rank.
    #[error("rank deficient Jacobian: {0}")]
    RankDeficient(String),

    /// The asymptotic variance matrix cannot be inverted.
    #[error("singular asymptotic variance V")]
    SingularV,

    /// The EL influence denominator vanished.
    #[error("pole encountered: 1 + t'g = {0}")]
    PoleEncountered(f64),

    /// The Jacobian of the joint misspecification system is singular.
    #[error("singular Gamma matrix")]
    SingularGamma,

    /// Invalid experiment or command configuration.
    #[error("configuration error: {0}")]
    ConfigError(String),

    /// A summary was requested over an empty set of values.
    #[error("empty value list")]
    EmptyValues,
}

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;
