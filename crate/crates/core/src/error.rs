use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("eigenvalues must be positive and strictly increasing (violated at index {index})")]
    NonMonotoneSpectrum { index: usize },
    #[error("covariance eigenvalue q[{index}] = {value} is negative")]
    NegativeCovariance { index: usize, value: f64 },
    #[error("fractional exponent {0} is negative")]
    NegativeExponent(f64),
    #[error("requested {requested} modes but only {available} are stored")]
    TruncationTooLarge { requested: usize, available: usize },
    #[error("level {level} has zero steps")]
    ZeroSteps { level: usize },
    #[error("at least one noise level is required")]
    EmptyLevels,
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("reversed window: start {start} > end {end}")]
    ReversedWindow { start: usize, end: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite state at merged step {eta}")]
    NonFiniteState { eta: usize },
    #[error("uniform scheme requires n_l = N on every level (level {level} has {n_level}, N = {n})")]
    NonUniformInput { level: usize, n_level: usize, n: usize },
    #[error("exact moments need a state-independent diffusion operator")]
    StateDependentDiffusion,
    #[error("all {0} Monte Carlo paths failed")]
    AllPathsFailed(usize),
    #[error("iota must lie in [0, 0.5], got {0}")]
    InvalidIota(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
