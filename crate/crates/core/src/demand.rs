//! Demand curves D(p) and quality-augmented demand surfaces D_Q(x^Q, p).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Marginal, TruncatedNormal};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::grid;
use crate::population::{Population, ProductFactor, RatioMarginalSpec};
use crate::quadrature::{self, ABS_TOL};

/// Default number of prices in a demand grid.
pub const DEFAULT_PRICE_POINTS: usize = 257;
/// Default Monte Carlo draw count.
pub const DEFAULT_MC_DRAWS: usize = 1_000_000;
/// Slack allowed on monotonicity checks.
pub const MONOTONE_TOL: f64 = 1e-12;

/// What an individual ends up holding after facing price `p` at quality `xq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceBundle {
    pub xk: u8,
    pub xq: f64,
    pub xm: f64,
}

/// Buys iff v^K + x^Q − v^M·p ≥ 0 (v^Q = 1). At x^Q = 0 this is the ratio
/// rule v^K / v^M ≥ p.
pub fn purchase_decision(vk: f64, vm: f64, xq: f64, p: f64) -> bool {
    debug_assert!(vm > 0.0);
    vk + xq - vm * p >= 0.0
}

/// Applies [`purchase_decision`] to an endowment of `money`.
pub fn choose(vk: f64, vm: f64, xq: f64, p: f64, money: f64) -> ChoiceBundle {
    if purchase_decision(vk, vm, xq, p) {
        ChoiceBundle { xk: 1, xq, xm: money - p }
    } else {
        ChoiceBundle { xk: 0, xq, xm: money }
    }
}

/// D(p) = P(r ≥ p), which is 1 − G(p) away from atoms of r.
pub fn demand(pop: &Population, p: f64) -> Result<f64> {
    check_price(p)?;
    finite_demand(pop.ratio_marginal()?.survival_inclusive(p), p)
}

fn finite_demand(d: f64, p: f64) -> Result<f64> {
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::QuadratureFailure { a: p, b: p, tol: ABS_TOL, levels: quadrature::MAX_LEVELS })
    }
}

fn check_price(p: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidInput { field: "price", reason: format!("{p} must be positive") });
    }
    Ok(())
}

fn check_grid(field: &'static str, grid: &[f64], positive: bool) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput { field, reason: "empty grid".into() });
    }
    if grid.iter().any(|x| !x.is_finite() || (positive && *x <= 0.0)) {
        return Err(Error::InvalidInput { field, reason: "grid values must be finite and positive".into() });
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput { field, reason: "grid must be sorted ascending".into() });
    }
    Ok(())
}

/// Demand tabulated on a price grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandCurve {
    pub prices: Vec<f64>,
    pub values: Vec<f64>,
}

impl DemandCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "p,D")?;
        for (p, d) in self.prices.iter().zip(&self.values) {
            writeln!(w, "{},{}", fmt_f64(*p), fmt_f64(*d))?;
        }
        Ok(())
    }

    /// Largest |self − other| over a shared grid.
    pub fn max_gap(&self, other: &DemandCurve) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The 257-point Chebyshev grid on [r_lo·(1 − 10⁻³), r_hi·(1 + 10⁻³)].
pub fn default_price_grid(pop: &Population) -> Vec<f64> {
    let s = pop.support();
    let hi = s.r_hi * (1.0 + 1e-3);
    let lo = (s.r_lo * (1.0 - 1e-3)).max(hi * 1e-6);
    grid::chebyshev(lo, hi, DEFAULT_PRICE_POINTS)
}

pub fn demand_curve(pop: &Population, prices: &[f64]) -> Result<DemandCurve> {
    check_grid("price_grid", prices, true)?;
    let ratio = pop.ratio_marginal()?;
    Ok(DemandCurve {
        prices: prices.to_vec(),
        values: prices.iter().map(|&p| finite_demand(ratio.survival_inclusive(p), p)).collect::<Result<_>>()?,
    })
}

/// Ratio CDF recovered from a demand curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCdf {
    pub r: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl RatioCdf {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,G")?;
        for (r, g) in self.r.iter().zip(&self.cdf) {
            writeln!(w, "{},{}", fmt_f64(*r), fmt_f64(*g))?;
        }
        Ok(())
    }
}

/// G(r) = 1 − D(r) at the curve's prices.
pub fn invert_demand(curve: &DemandCurve) -> Result<RatioCdf> {
    if curve.prices.len() != curve.values.len() {
        return Err(Error::InvalidInput { field: "curve", reason: "prices and values differ in length".into() });
    }
    check_grid("curve.prices", &curve.prices, true)?;
    for (i, w) in curve.values.windows(2).enumerate() {
        let rise = w[1] - w[0];
        if rise > MONOTONE_TOL {
            return Err(Error::MonotonicityViolation {
                p_left: curve.prices[i],
                p_right: curve.prices[i + 1],
                amount: rise,
            });
        }
    }
    Ok(RatioCdf { r: curve.prices.clone(), cdf: curve.values.iter().map(|d| 1.0 - d).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Quadrature,
    MonteCarlo,
}

/// A numerical value with its standard error (zero for quadrature).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
    pub method: EstimateMethod,
}

/// Fraction of draws that buy at price `p` and quality `xq`.
pub fn empirical_quality_demand(draws: &[(f64, f64)], xq: f64, p: f64) -> Estimate {
    let n = draws.len() as f64;
    let buyers = draws.iter().filter(|(vk, vm)| purchase_decision(*vk, *vm, xq, p)).count() as f64;
    let value = buyers / n;
    Estimate { value, std_err: (value * (1.0 - value) / n).sqrt(), method: EstimateMethod::MonteCarlo }
}

pub fn empirical_demand(draws: &[(f64, f64)], p: f64) -> Estimate {
    empirical_quality_demand(draws, 0.0, p)
}

/// D_Q(x^Q, p) = P(v^K − p·v^M ≥ −x^Q) by quadrature.
pub fn quality_demand(pop: &Population, xq: f64, p: f64) -> Result<f64> {
    quality_demand_tol(pop, xq, p, ABS_TOL)
}

/// [`quality_demand`] at an explicit absolute quadrature tolerance.
pub fn quality_demand_tol(pop: &Population, xq: f64, p: f64, tol: f64) -> Result<f64> {
    check_price(p)?;
    if !xq.is_finite() {
        return Err(Error::InvalidInput { field: "quality", reason: format!("{xq} is not finite") });
    }
    Ok(quality_demand_unchecked(pop, xq, p, tol)?.clamp(0.0, 1.0))
}

/// Monte Carlo D_Q with its binomial standard error.
pub fn quality_demand_mc(pop: &Population, xq: f64, p: f64, n: usize, seed: u64) -> Result<Estimate> {
    check_price(p)?;
    Ok(empirical_quality_demand(&pop.sample(n, seed)?, xq, p))
}

/// Quadrature when it converges, otherwise a seeded Monte Carlo estimate.
pub fn quality_demand_estimate(pop: &Population, xq: f64, p: f64, seed: u64) -> Result<Estimate> {
    match quality_demand(pop, xq, p) {
        Ok(value) => Ok(Estimate { value, std_err: 0.0, method: EstimateMethod::Quadrature }),
        Err(Error::QuadratureFailure { .. }) => quality_demand_mc(pop, xq, p, DEFAULT_MC_DRAWS, seed),
        Err(e) => Err(e),
    }
}

fn quality_demand_unchecked(pop: &Population, xq: f64, p: f64, tol: f64) -> Result<f64> {
    match pop {
        Population::PointMass { vk, vm } => Ok(if purchase_decision(*vk, *vm, xq, p) { 1.0 } else { 0.0 }),
        Population::Product { factor: ProductFactor::Ratio(ratio), vm } => {
            // v^M (r − p) ≥ −x^Q  ⇔  r ≥ p − x^Q / v^M
            let survival = |v: f64| 1.0 - ratio.cdf(p - xq / v);
            match vm {
                Marginal::Point { value } => Ok(survival(*value)),
                _ => {
                    let (lo, hi) = vm.bounds();
                    let breaks: Vec<f64> = [ratio.r_lo(), ratio.r_hi()]
                        .iter()
                        .filter(|r| (p - **r).abs() > 0.0)
                        .map(|r| xq / (p - r))
                        .collect();
                    quadrature::integrate_with_breaks(|v| survival(v) * vm.pdf(v), lo, hi, &breaks, tol)
                }
            }
        }
        Population::Product { factor: ProductFactor::GoodValue(vk), vm } => match (vk, vm) {
            (_, Marginal::Point { value }) => Ok(vk.survival_inclusive(p * value - xq)),
            (Marginal::Point { value: k }, _) => Ok(vm.cdf((k + xq) / p)),
            _ => {
                // everyone with v^M below `a` buys and nobody above `b` does
                let (lo, hi) = vm.bounds();
                let (k_lo, k_hi) = vk.bounds();
                let a = ((xq + k_lo) / p).clamp(lo, hi);
                let b = ((xq + k_hi) / p).clamp(lo, hi);
                let sure = vm.cdf(a) - vm.cdf(lo);
                if a >= b {
                    return Ok(sure);
                }
                let mixed = quadrature::integrate(|v| vk.survival_inclusive(p * v - xq) * vm.pdf(v), a, b, tol)?;
                Ok(sure + mixed)
            }
        },
        Population::RatioConditional { ratio, .. } => ratio_conditional_quality_demand(pop, ratio, xq, p, tol),
        Population::Mixture(components) => {
            let mut total = 0.0;
            for c in components {
                total += c.weight * quality_demand_unchecked(&c.population, xq, p, tol)?;
            }
            Ok(total)
        }
    }
}

/// P(buy | r) for v^M ~ `tn`: v^M (r − p) ≥ −x^Q.
fn buy_probability(tn: &TruncatedNormal, r: f64, xq: f64, p: f64) -> f64 {
    let d = r - p;
    if d == 0.0 {
        return if xq >= 0.0 { 1.0 } else { 0.0 };
    }
    let threshold = xq / (p - r);
    if d > 0.0 {
        1.0 - tn.cdf(threshold)
    } else {
        tn.cdf(threshold)
    }
}

const KINK_SCAN: usize = 257;
const GEOMETRIC_SCAN: i32 = 60;

fn ratio_conditional_quality_demand(
    pop: &Population,
    ratio: &RatioMarginalSpec,
    xq: f64,
    p: f64,
    tol: f64,
) -> Result<f64> {
    let law = |r: f64| pop.conditional_vm(r).expect("ratio-conditional population");
    let (lo, hi) = (ratio.r_lo(), ratio.r_hi());
    // the buy probability has kinks where x^Q / (p − r) crosses a band edge
    let mut breaks = vec![p];
    let edge_gap = |r: f64, upper: bool| {
        let tn = law(r);
        let edge = if upper { tn.upper() } else { tn.lower() };
        xq / (p - r) - edge
    };
    for upper in [false, true] {
        for (a, b) in [(lo, p.min(hi)), (p.max(lo), hi)] {
            if b <= a {
                continue;
            }
            // x^Q / (p − r) moves fastest near r = p, so refine geometrically there
            let mut scan = grid::uniform(a, b, KINK_SCAN);
            scan.extend((1..=GEOMETRIC_SCAN).flat_map(|k| {
                let d = (b - a) * 0.5f64.powi(k);
                [p - d, p + d]
            }).filter(|r| *r > a && *r < b));
            scan.sort_by(f64::total_cmp);
            scan.dedup();
            let mut prev: Option<(f64, f64)> = None;
            for r in scan {
                if r == p {
                    prev = None;
                    continue;
                }
                let v = edge_gap(r, upper);
                if let Some((r0, v0)) = prev {
                    if v0 == 0.0 {
                        breaks.push(r0);
                    } else if v0.signum() != v.signum() && v.is_finite() && v0.is_finite() {
                        breaks.push(bisect(|x| edge_gap(x, upper), r0, r, v0));
                    }
                }
                prev = Some((r, v));
            }
        }
    }
    breaks.extend(ratio.kinks());
    quadrature::integrate_with_breaks(|r| ratio.pdf(r) * buy_probability(&law(r), r, xq, p), lo, hi, &breaks, tol)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// D_Q tabulated on quality × price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityDemandSurface {
    pub quality_grid: Vec<f64>,
    pub price_grid: Vec<f64>,
    /// Row-major: `values[i * price_grid.len() + j]` is D_Q(quality_grid[i], price_grid[j]).
    pub values: Vec<f64>,
    /// Largest D_Q(min x^Q, p) + 1 − D_Q(max x^Q, p) over prices: mass the
    /// finite quality span fails to resolve.
    pub tail_mass: f64,
}

impl QualityDemandSurface {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.price_grid.len() + j]
    }

    pub fn price_index(&self, p: f64) -> Option<usize> {
        self.price_grid
            .iter()
            .position(|q| (q - p).abs() <= 1e-12 * p.abs().max(1.0))
    }

    /// D_Q along the quality grid at price index `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.quality_grid.len()).map(|i| self.get(i, j)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "xQ,p,DQ")?;
        for (i, q) in self.quality_grid.iter().enumerate() {
            for (j, p) in self.price_grid.iter().enumerate() {
                writeln!(w, "{},{},{}", fmt_f64(*q), fmt_f64(*p), fmt_f64(self.get(i, j)))?;
            }
        }
        Ok(())
    }
}

pub fn quality_demand_surface(pop: &Population, quality_grid: &[f64], price_grid: &[f64]) -> Result<QualityDemandSurface> {
    check_grid("quality_grid", quality_grid, false)?;
    check_grid("price_grid", price_grid, true)?;
    let rows: Vec<Vec<f64>> = quality_grid
        .par_iter()
        .map(|&q| price_grid.iter().map(|&p| quality_demand(pop, q, p)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    let n_p = price_grid.len();
    let last = quality_grid.len() - 1;
    let tail_mass = (0..n_p)
        .map(|j| values[j] + 1.0 - values[last * n_p + j])
        .fold(0.0, f64::max);
    Ok(QualityDemandSurface {
        quality_grid: quality_grid.to_vec(),
        price_grid: price_grid.to_vec(),
        values,
        tail_mass,
    })
}
