use alloc::string::String;

/// Errors raised by the algebra, the engines and the samplers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{what} = {value} is outside its domain {domain}")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("coefficient {index} is {value}, below the clamping tolerance")]
    NegativeCoefficient { index: usize, value: f64 },
    #[error("coefficients sum to {sum}, exceeding one")]
    MassExceeded { sum: f64 },
    #[error("probability vector sums to {sum}, not one")]
    Unnormalized { sum: f64 },
    #[error("truncation orders differ: {left} vs {right}")]
    OrderMismatch { left: usize, right: usize },
    #[error("linear-fractional parameters use different nu: {left} vs {right}")]
    NuMismatch { left: f64, right: f64 },
    #[error("factorial moment of order {k} requested from a series truncated at {order}")]
    MomentOrder { k: usize, order: usize },
    #[error("series has non-positive constant term {value}; logarithm undefined")]
    LogOfNonPositive { value: f64 },
    #[error("offspring generating function is degenerate at zero (f(s) = 1 for s < 1)")]
    DegenerateOffspring,
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("invalid immigration law: {0}")]
    InvalidImmigration(String),
    #[error("scaling threshold 1/{n} not reached within horizon {horizon}")]
    HorizonExhausted { n: u64, horizon: usize },
    #[error("process is extinct with probability one at generation {generation}")]
    CertainExtinction { generation: u64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("state {state} exceeds the cap {cap}")]
    StateCap { state: usize, cap: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
