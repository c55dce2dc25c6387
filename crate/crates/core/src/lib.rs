//! Random-utility unit demand with good value v^K and money value v^M.
//!
//! Builds joint populations of (v^K, v^M), evaluates ordinary and
//! quality-augmented demand, constructs pairs of populations that share one
//! demand curve but differ in same-side inequality, and recovers
//! cross-moments of (v^K, v^M) from a quality-demand surface.

pub mod cli;
pub mod demand;
pub mod distributions;
pub mod error;
pub mod grid;
pub mod identification;
pub mod inequality;
pub mod moments;
pub mod population;
pub mod quadrature;

pub use demand::{DemandCurve, QualityDemandSurface, RatioCdf};
pub use distributions::{Marginal, PiecewiseLinear, TruncatedNormal};
pub use error::{Error, Result};
pub use identification::{IdentificationConfig, RecoveryReport, SliceDistribution};
pub use inequality::{InequalityReport, Method, NonIdDemo, Regime};
pub use moments::MomentTable;
pub use population::{ConditionalSpec, EpsilonRule, HFunction, Population, RatioMarginalSpec};

/// 17 significant digits, enough for a lossless round trip.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}
