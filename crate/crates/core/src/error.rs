use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid degree {0}: families need degree >= 2")]
    InvalidDegree(u32),

    #[error("unknown family identifier `{0}`")]
    UnknownFamily(String),

    #[error("incompatible parameters: dimension {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("depth {requested} exceeds orbit table depth {available}")]
    DepthExceeded { requested: usize, available: usize },

    #[error("operation requires a polynomial family with dim Λ = 1")]
    UnsupportedFamily,

    #[error("radius {radius} is below the resolution guard {guard}")]
    BelowResolution { radius: f64, guard: f64 },

    #[error("kappa {kappa} out of range (0, {mass})")]
    KappaOutOfRange { kappa: f64, mass: f64 },

    #[error("entropy undefined: region carries no mass")]
    ZeroMass,

    #[error("pointwise dimension undefined: no mass within the largest radius")]
    UndefinedDimension,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
