//! Same-side inequality: E[v^M | r = r_lo] against 2·E[v^M], and the
//! demonstration that two populations with one demand curve can fall on
//! opposite sides of it.

use serde::{Deserialize, Serialize};

use crate::demand::{self, DemandCurve};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::population::{
    high_family_bound, low_family_bound, make_high_population, make_low_population, Population, ProductFactor,
    RatioMarginalSpec,
};

/// Number of shrinking windows used by the limit estimate.
pub const LIMIT_WINDOWS: usize = 7;
/// Initial window width as a fraction of the ratio support.
pub const LIMIT_B0_FRACTION: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Analytic,
    LimitEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Low,
    High,
}

/// E[v^M | r = r_lo] with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMean {
    pub value: f64,
    pub method: Method,
    /// Difference between the two finest extrapolations (limit path only).
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub mean_vm: f64,
    pub boundary_mean_vm: f64,
    pub threshold: f64,
    pub regime: Regime,
    pub method: Method,
    pub extrapolation_residual: Option<f64>,
}

/// E[v^M]. For ratio-conditional populations this is ∫ h(r) dr.
pub fn mean_vm(pop: &Population) -> Result<f64> {
    match pop {
        Population::RatioConditional { ratio, cond } => Ok(cond.h.integral(ratio.r_lo(), ratio.r_hi(), ratio.r_lo())),
        Population::PointMass { vm, .. } => Ok(*vm),
        Population::Product { vm, .. } => Ok(vm.raw_moment(1)),
        Population::Mixture(_) => Ok(pop.moments(1)?.get(0, 1)),
    }
}

/// E[v^M | r = r_lo], read as lim_{b↓0} E[v^M | r ∈ [r_lo, r_lo + b]].
pub fn boundary_conditional_mean(pop: &Population) -> Result<BoundaryMean> {
    let analytic = |value| Ok(BoundaryMean { value, method: Method::Analytic, residual: None });
    match pop {
        Population::RatioConditional { ratio, cond } => {
            let g0 = ratio.pdf(ratio.r_lo());
            if g0 <= 0.0 {
                return Err(Error::BoundaryMassZero { estimate: g0 });
            }
            analytic(cond.h.eval(ratio.r_lo(), ratio.r_lo()) / g0)
        }
        Population::Product { factor: ProductFactor::Ratio(ratio), vm } => {
            let g0 = ratio.pdf(ratio.r_lo());
            if g0 <= 0.0 {
                return Err(Error::BoundaryMassZero { estimate: g0 });
            }
            analytic(vm.raw_moment(1))
        }
        _ => limit_estimate(pop),
    }
}

/// Window means over [r_lo, r_lo + b_k], b_k = b_0 2^{-k}, extrapolated
/// linearly in b to zero from the two narrowest windows.
pub fn limit_estimate(pop: &Population) -> Result<BoundaryMean> {
    let s = pop.support();
    let width = s.r_hi - s.r_lo;
    let b0 = if width > 0.0 { width * LIMIT_B0_FRACTION } else { 1e-3 * s.r_lo.max(1.0) };
    let mut means = Vec::with_capacity(LIMIT_WINDOWS);
    let mut densities = Vec::with_capacity(LIMIT_WINDOWS);
    for k in 0..LIMIT_WINDOWS {
        let b = b0 * 0.5f64.powi(k as i32);
        let (mass, weighted) = pop.ratio_window(s.r_lo, s.r_lo + b)?;
        if mass <= 0.0 {
            return Err(Error::BoundaryMassZero { estimate: 0.0 });
        }
        means.push(weighted / mass);
        densities.push(mass / b);
    }
    let n = LIMIT_WINDOWS;
    let density_at_edge = 2.0 * densities[n - 1] - densities[n - 2];
    let scale = if width > 0.0 { 1.0 / width } else { 1.0 };
    if density_at_edge <= 1e-6 * scale {
        return Err(Error::BoundaryMassZero { estimate: density_at_edge });
    }
    let finest = 2.0 * means[n - 1] - means[n - 2];
    let coarser = 2.0 * means[n - 2] - means[n - 3];
    Ok(BoundaryMean { value: finest, method: Method::LimitEstimate, residual: Some((finest - coarser).abs()) })
}

/// Low iff E[v^M | r_lo] ≤ 2 E[v^M].
pub fn classify(pop: &Population) -> Result<InequalityReport> {
    let mean = mean_vm(pop)?;
    let boundary = boundary_conditional_mean(pop)?;
    Ok(report(mean, boundary))
}

fn report(mean: f64, boundary: BoundaryMean) -> InequalityReport {
    let threshold = 2.0 * mean;
    InequalityReport {
        mean_vm: mean,
        boundary_mean_vm: boundary.value,
        threshold,
        regime: if boundary.value <= threshold { Regime::Low } else { Regime::High },
        method: boundary.method,
        extrapolation_residual: boundary.residual,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaCheck {
    pub bound: f64,
    pub ok: bool,
}

/// Sufficient δ bound for each family: δ ≤ bound (low), δ < bound (high).
pub fn check_delta_bounds(ratio: &RatioMarginalSpec, delta: f64, family: Family) -> DeltaCheck {
    match family {
        Family::Low => {
            let bound = low_family_bound(ratio);
            DeltaCheck { bound, ok: delta > 0.0 && delta <= bound }
        }
        Family::High => {
            let bound = high_family_bound(ratio);
            DeltaCheck { bound, ok: delta > 0.0 && delta < bound }
        }
    }
}

/// How the demo evaluates the two demand curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSource {
    Analytic,
    /// Empirical demand from `draws` samples per population; the high family
    /// uses `seed + 1`.
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonIdDemo {
    pub low_pop: Population,
    pub high_pop: Population,
    pub shared_curve: DemandCurve,
    pub high_curve: DemandCurve,
    pub curve_gap: f64,
    pub tolerance: f64,
    pub demand_source: DemandSource,
    pub reports: (InequalityReport, InequalityReport),
}

impl NonIdDemo {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "p,D_low,D_high,gap")?;
        let low = &self.shared_curve;
        for (i, p) in low.prices.iter().enumerate() {
            let (a, b) = (low.values[i], self.high_curve.values[i]);
            writeln!(w, "{},{},{},{}", fmt_f64(*p), fmt_f64(a), fmt_f64(b), fmt_f64((a - b).abs()))?;
        }
        Ok(())
    }
}

pub fn build_nonid_demo(
    ratio: &RatioMarginalSpec,
    delta_low: f64,
    delta_high: f64,
    price_grid: &[f64],
    tol: f64,
) -> Result<NonIdDemo> {
    build_nonid_demo_with(ratio, delta_low, delta_high, price_grid, tol, DemandSource::Analytic)
}

/// Builds both counterexample families on `ratio`, checks their demand curves
/// agree within `tol`, and checks their regimes differ.
pub fn build_nonid_demo_with(
    ratio: &RatioMarginalSpec,
    delta_low: f64,
    delta_high: f64,
    price_grid: &[f64],
    tol: f64,
    source: DemandSource,
) -> Result<NonIdDemo> {
    let fail = |msg: String| Error::DemoFailure(msg);
    let low_pop = make_low_population(ratio.clone(), delta_low).map_err(|e| fail(format!("low family: {e}")))?;
    let high_pop = make_high_population(ratio.clone(), delta_high).map_err(|e| fail(format!("high family: {e}")))?;

    let curve = |pop: &Population, offset: u64| -> Result<DemandCurve> {
        match source {
            DemandSource::Analytic => demand::demand_curve(pop, price_grid),
            DemandSource::MonteCarlo { draws, seed } => {
                let sample = pop.sample(draws, seed.wrapping_add(offset))?;
                Ok(DemandCurve {
                    prices: price_grid.to_vec(),
                    values: price_grid.iter().map(|&p| demand::empirical_demand(&sample, p).value).collect(),
                })
            }
        }
    };
    let shared_curve = curve(&low_pop, 0)?;
    let high_curve = curve(&high_pop, 1)?;
    let curve_gap = shared_curve.max_gap(&high_curve);
    if curve_gap.is_nan() || curve_gap > tol {
        return Err(fail(format!("demand curves differ by {curve_gap:e}, above tolerance {tol:e}")));
    }
    let low_report = classify(&low_pop)?;
    let high_report = classify(&high_pop)?;
    if low_report.regime != Regime::Low {
        return Err(fail(format!(
            "low family classified {:?}: boundary mean {} vs threshold {}",
            low_report.regime, low_report.boundary_mean_vm, low_report.threshold
        )));
    }
    if high_report.regime != Regime::High {
        return Err(fail(format!(
            "high family classified {:?}: boundary mean {} vs threshold {}",
            high_report.regime, high_report.boundary_mean_vm, high_report.threshold
        )));
    }
    Ok(NonIdDemo {
        low_pop,
        high_pop,
        shared_curve,
        high_curve,
        curve_gap,
        tolerance: tol,
        demand_source: source,
        reports: (low_report, high_report),
    })
}
