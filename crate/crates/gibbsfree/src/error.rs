use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid degree/regularity pair: p = {p}, alpha = {alpha} (need -1 <= alpha <= p-1)")]
    InvalidRegularity { p: usize, alpha: i64 },

    #[error("a spline space needs at least one element per direction")]
    ZeroElements,

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("point ({x}, {y}) lies outside the domain")]
    PointOutsideDomain { x: f64, y: f64 },

    #[error("derivative order {requested} unsupported here (max {max})")]
    UnsupportedDerivative { requested: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coefficient vector has length {got}, space has {expected} dofs")]
    CoefficientLength { expected: usize, got: usize },

    #[error("quadrature order must be at least 1")]
    InvalidQuadOrder,

    #[error("Gram matrix is not positive definite{hint}")]
    IndefiniteGram { hint: String },

    #[error("{kind} projection requires {requirement}")]
    UnsuitableInnerProduct { kind: String, requirement: String },

    #[error("invalid subdomain partition: {0}")]
    InvalidPartition(String),

    #[error("direction must be a unit vector (got |e| = {0})")]
    NonUnitDirection(f64),

    #[error("regularization parameter must be positive (got {0})")]
    InvalidRegularization(f64),

    #[error("target is not monotone on element {element}")]
    NotMonotone { element: usize },

    #[error("interpolation system is singular")]
    SingularInterpolation,

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("sample grid must contain at least one point per element")]
    EmptyGrid,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
