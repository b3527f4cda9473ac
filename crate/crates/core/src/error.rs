use thiserror::Error;

/// Errors produced by the map, function-space and operator layers.
#[derive(Debug, Error)]
pub enum CuspError {
    #[error("point {x} lies outside [0, 1]")]
    Domain { x: f64 },

    #[error("derivative requested at the cusp x = {cusp}")]
    Singularity { cusp: f64 },

    #[error("value {y} lies outside the branch range [0, {peak}]")]
    Range { y: f64, peak: f64 },

    #[error("derivative order {0} is not supported (expected 1, 2 or 3)")]
    InvalidOrder(u8),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: expected {expected} samples, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("cubic interpolation needs at least 4 nodes, got {0}")]
    TooFewNodes(usize),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("splines live on different meshes")]
    MeshMismatch,

    #[error("non-finite integrand value {value} at x = {x}")]
    NonFinite { x: f64, value: f64 },

    #[error("order-{order} Sobolev norm needs a C1 or smoother spline")]
    Regularity { order: u8 },

    #[error("input must have zero mean, integral is {0:e}")]
    NonZeroMean(f64),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("eigensolver breakdown: {0}")]
    Eigen(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CuspError>;
