use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid ground space: {0}")]
    InvalidSpace(String),

    #[error("atom index {index} out of range for a space of {n} atoms")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid intensity: {0}")]
    InvalidIntensity(String),

    #[error("kernel cannot be sampled: {0}")]
    InvalidKernel(String),

    #[error("invalid process model: {0}")]
    InvalidModel(String),

    #[error("{what} supports at most {max} atoms, got {n}")]
    TooLarge { what: &'static str, max: usize, n: usize },

    #[error("I - K is singular; the L-ensemble does not exist")]
    SingularIminusK,

    #[error("sample batch is empty")]
    EmptyBatch,

    #[error("contour of radius {radius:.6e} passes through a zero")]
    ContourThroughZero { radius: f64 },

    #[error("winding number {value:.6} is not an integer (residue {residue:.3e})")]
    NonIntegerWindingNumber { value: f64, residue: f64 },

    #[error("trapezoidal quadrature did not converge at radius {radius:.6e} with {nodes} nodes")]
    QuadratureNotConverged { radius: f64, nodes: usize },

    #[error("zero at the origin")]
    ZeroAtOrigin,

    #[error("determinantal factor vanishes at z = 1 (|B| = {modulus:.3e}); perturb the test function")]
    DivisionNearZero { modulus: f64 },

    #[error("factor value {value} is not a positive real")]
    NonPositiveFactorValue { value: String },

    #[error("generating functional value {value} is not a positive real")]
    NonPositiveValue { value: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),
}
