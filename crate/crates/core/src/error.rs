use thiserror::Error;

/// Failures raised by the library operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("invalid input `{field}`: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    #[error("delta = {delta} violates the {family} family bound {bound}")]
    BoundViolation {
        family: &'static str,
        delta: f64,
        bound: f64,
    },

    #[error("population has no density ({0})")]
    NoDensity(&'static str),

    #[error("ratio v^K/v^M is degenerate: {0}")]
    DegenerateRatio(String),

    #[error("quadrature did not reach tolerance {tol:e} on [{a}, {b}] after {levels} levels")]
    QuadratureFailure { a: f64, b: f64, tol: f64, levels: u32 },

    #[error("demand curve increases by {amount:e} between p = {p_left} and p = {p_right}")]
    MonotonicityViolation {
        p_left: f64,
        p_right: f64,
        amount: f64,
    },

    #[error("ratio density vanishes at the lower boundary (estimate {estimate:e})")]
    BoundaryMassZero { estimate: f64 },

    #[error("slice at p = {p} leaves tail mass {tail_mass:e} outside the quality span (bound {bound:e})")]
    TailMassExceeded { p: f64, tail_mass: f64, bound: f64 },

    #[error("price {0} is not a column of the quality-demand surface")]
    PriceNotInSurface(f64),

    #[error("need at least {needed} distinct prices spanning an interval, got {got}")]
    InsufficientPrices { needed: usize, got: usize },

    #[error("order-{order} moment system has condition estimate {condition:e} (limit {limit:e}); widen the price set")]
    IllConditioned {
        order: usize,
        condition: f64,
        limit: f64,
    },

    #[error("non-identification demo failed: {0}")]
    DemoFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
