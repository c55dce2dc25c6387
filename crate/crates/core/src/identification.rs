//! Moment recovery from a quality-demand surface.
//!
//! At each price p the column x^Q ↦ D_Q(x^Q, p) gives the law of
//! W_p = v^K − p v^M. Its moments are polynomials in p whose coefficients are
//! the cross-moments of (v^K, v^M); solving across prices recovers them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{self, QualityDemandSurface};
use crate::distributions::binomial;
use crate::error::{Error, Result};
use crate::grid;
use crate::moments::MomentTable;
use crate::population::Population;
use crate::quadrature;

/// Largest condition number accepted for the per-order price system.
pub const CONDITION_LIMIT: f64 = 1e10;

/// Tabulated CDF of W_p, F(w) = P(W_p < w) = 1 − D_Q(−w, p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDistribution {
    pub p: f64,
    pub w_grid: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Largest pointwise change made by clipping and isotonic repair.
    pub repair_magnitude: f64,
    /// F at the left end plus 1 − F at the right end.
    pub tail_mass: f64,
}

/// Least-squares non-decreasing fit (pool adjacent violators, equal weights).
pub fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        let mut block = (v, 1usize);
        while let Some(&(mean, count)) = blocks.last() {
            if mean <= block.0 {
                break;
            }
            blocks.pop();
            let total = count + block.1;
            block = ((mean * count as f64 + block.0 * block.1 as f64) / total as f64, total);
        }
        blocks.push(block);
    }
    blocks.into_iter().flat_map(|(mean, count)| std::iter::repeat_n(mean, count)).collect()
}

pub fn slice_from_surface(surface: &QualityDemandSurface, p: f64, tail_bound: f64) -> Result<SliceDistribution> {
    let j = surface.price_index(p).ok_or(Error::PriceNotInSurface(p))?;
    let column = surface.column(j);
    let w_grid: Vec<f64> = surface.quality_grid.iter().rev().map(|q| -q).collect();
    let raw: Vec<f64> = column.iter().rev().map(|d| (1.0 - d).clamp(0.0, 1.0)).collect();
    let cdf = isotonic(&raw);
    let repair_magnitude = column
        .iter()
        .rev()
        .zip(&cdf)
        .map(|(d, f)| (1.0 - d - f).abs())
        .fold(0.0, f64::max);
    let tail_mass = cdf[0] + 1.0 - cdf[cdf.len() - 1];
    if tail_mass > tail_bound {
        return Err(Error::TailMassExceeded { p: surface.price_grid[j], tail_mass, bound: tail_bound });
    }
    Ok(SliceDistribution { p: surface.price_grid[j], w_grid, cdf, repair_magnitude, tail_mass })
}

/// E[W^m], m = 1..=n, as a midpoint Stieltjes sum. Mass left of the grid is
/// placed at the first node and mass right of it at the last.
pub fn slice_moments(slice: &SliceDistribution, n: usize) -> Vec<f64> {
    let (w, f) = (&slice.w_grid, &slice.cdf);
    let last = w.len() - 1;
    let mut out = vec![0.0; n];
    let mut add = |x: f64, mass: f64| {
        if mass != 0.0 {
            let mut pow = 1.0;
            for o in out.iter_mut() {
                pow *= x;
                *o += pow * mass;
            }
        }
    };
    add(w[0], f[0]);
    for i in 0..last {
        add(0.5 * (w[i] + w[i + 1]), f[i + 1] - f[i]);
    }
    add(w[last], 1.0 - f[last]);
    out
}

/// E[W_p^m], m = 1..=n, by quadrature of m w^{m−1} P(W ≥ w) over the
/// W-support, evaluating P(W ≥ w) = D_Q(−w, p) directly on the population.
pub fn slice_moments_quadrature(pop: &Population, p: f64, n: usize, tol: f64) -> Result<Vec<f64>> {
    let s = pop.support();
    let (lo, hi) = (s.vk_lo - p * s.vm_hi, s.vk_hi - p * s.vm_lo);
    let mut out = Vec::with_capacity(n);
    for m in 1..=n {
        let failure = std::cell::Cell::new(None);
        let integrand = |w: f64| match demand::quality_demand_tol(pop, -w, p, 1e-2 * tol) {
            Ok(d) => m as f64 * w.powi(m as i32 - 1) * d,
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        };
        let breaks: Vec<f64> = if lo < 0.0 && hi > 0.0 { vec![0.0] } else { vec![] };
        let v = quadrature::integrate_with_breaks(integrand, lo, hi, &breaks, tol)?;
        if let Some(e) = failure.take() {
            return Err(e);
        }
        out.push(lo.powi(m as i32) + v);
    }
    Ok(out)
}

fn distinct_count(prices: &[f64]) -> usize {
    let mut sorted = prices.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    sorted.len()
}

/// Solves, for each order n ≤ `max_order`, the least-squares system
/// Σ_k C(n,k)(−p_i)^k μ_{n−k,k} = E[W_{p_i}^n]. `moments[i][n−1]` is
/// E[W_{p_i}^n]. Diagnostics hold the condition number of that order's system.
pub fn solve_cross_moments(prices: &[f64], moments: &[Vec<f64>], max_order: usize) -> Result<MomentTable> {
    if max_order == 0 {
        return Err(Error::InvalidInput { field: "max_order", reason: "must be at least 1".into() });
    }
    if moments.len() != prices.len() || moments.iter().any(|m| m.len() < max_order) {
        return Err(Error::InvalidInput { field: "moments", reason: "one moment row of length max_order per price".into() });
    }
    let got = distinct_count(prices);
    if got < max_order + 1 {
        return Err(Error::InsufficientPrices { needed: max_order + 1, got });
    }
    let mut table = MomentTable::new(max_order);
    for n in 1..=max_order {
        let a = DMatrix::from_fn(prices.len(), n + 1, |i, k| binomial(n, k) * (-prices[i]).powi(k as i32));
        let b = DVector::from_fn(prices.len(), |i, _| moments[i][n - 1]);
        let svd = a.svd(true, true);
        let sv = &svd.singular_values;
        let condition = sv.max() / sv.min();
        if condition.is_nan() || condition > CONDITION_LIMIT {
            return Err(Error::IllConditioned { order: n, condition, limit: CONDITION_LIMIT });
        }
        let x = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::InvalidInput { field: "moments", reason: e.to_string() })?;
        for k in 0..=n {
            table.set(n - k, k, x[k], condition);
        }
    }
    if !table.is_finite() {
        return Err(Error::InvalidInput { field: "moments", reason: "non-finite slice moments".into() });
    }
    Ok(table)
}

pub fn recover_cross_moments(slices: &[SliceDistribution], max_order: usize) -> Result<MomentTable> {
    let prices: Vec<f64> = slices.iter().map(|s| s.p).collect();
    let moments: Vec<Vec<f64>> = slices.iter().map(|s| slice_moments(s, max_order)).collect();
    solve_cross_moments(&prices, &moments, max_order)
}

fn default_n_prices() -> usize {
    9
}
fn default_max_order() -> usize {
    4
}
fn default_quality_points() -> usize {
    4096
}
fn default_tail_bound() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationConfig {
    pub price_lo: f64,
    pub price_hi: f64,
    #[serde(default = "default_n_prices")]
    pub n_prices: usize,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default = "default_quality_points")]
    pub quality_points: usize,
    /// Padding added on both sides of the induced x^Q span; `None` pads by 5%
    /// of the span width.
    #[serde(default)]
    pub quality_pad: Option<f64>,
    /// Translation applied to the whole quality grid.
    #[serde(default)]
    pub quality_shift: f64,
    #[serde(default = "default_tail_bound")]
    pub tail_bound: f64,
}

impl IdentificationConfig {
    pub fn new(price_lo: f64, price_hi: f64) -> Self {
        Self {
            price_lo,
            price_hi,
            n_prices: default_n_prices(),
            max_order: default_max_order(),
            quality_points: default_quality_points(),
            quality_pad: None,
            quality_shift: 0.0,
            tail_bound: default_tail_bound(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| Err(Error::InvalidInput { field, reason: reason.into() });
        if !(self.price_lo > 0.0 && self.price_lo.is_finite()) {
            return bad("identification.price_lo", "must be positive and finite");
        }
        if !(self.price_hi >= self.price_lo && self.price_hi.is_finite()) {
            return bad("identification.price_hi", "must be finite and at least price_lo");
        }
        if self.max_order == 0 {
            return bad("identification.max_order", "must be at least 1");
        }
        if self.n_prices == 0 {
            return bad("identification.n_prices", "must be at least 1");
        }
        if self.quality_points < 2 {
            return bad("identification.quality_points", "must be at least 2");
        }
        if let Some(pad) = self.quality_pad {
            if !(pad >= 0.0 && pad.is_finite()) {
                return bad("identification.quality_pad", "must be non-negative and finite");
            }
        }
        if !self.quality_shift.is_finite() {
            return bad("identification.quality_shift", "must be finite");
        }
        if self.tail_bound.is_nan() || self.tail_bound < 0.0 {
            return bad("identification.tail_bound", "must be non-negative");
        }
        Ok(())
    }

    /// Chebyshev price nodes; a degenerate interval repeats one price.
    pub fn prices(&self) -> Vec<f64> {
        if self.price_hi == self.price_lo || self.n_prices == 1 {
            vec![self.price_lo; self.n_prices]
        } else {
            grid::chebyshev(self.price_lo, self.price_hi, self.n_prices)
        }
    }

    /// Uniform x^Q grid over [−w_hi − pad, −w_lo + pad] + shift, where
    /// [w_lo, w_hi] bounds v^K − p v^M over the support and the price interval.
    pub fn quality_grid(&self, pop: &Population) -> Vec<f64> {
        let s = pop.support();
        let w_lo = s.vk_lo - self.price_hi * s.vm_hi;
        let w_hi = s.vk_hi - self.price_lo * s.vm_lo;
        let pad = self.quality_pad.unwrap_or_else(|| (0.05 * (w_hi - w_lo)).max(1e-3));
        grid::uniform(-w_hi - pad + self.quality_shift, -w_lo + pad + self.quality_shift, self.quality_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub max_relative_error: f64,
    pub worst_entry: (usize, usize),
    pub recovered_mean_vm: f64,
    pub prices: Vec<f64>,
    pub quality_span: (f64, f64),
    pub quality_points: usize,
    /// Condition number of the price system for orders 1..=N.
    pub conditions: Vec<f64>,
    pub tail_mass: f64,
    pub max_repair: f64,
    pub recovered: MomentTable,
    pub reference: MomentTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub report: RecoveryReport,
    pub surface: QualityDemandSurface,
}

/// Surface → slices → recovered moments, compared against `pop.moments`.
pub fn verify_recovery(pop: &Population, config: &IdentificationConfig) -> Result<Recovery> {
    verify_recovery_on(pop, config, &config.quality_grid(pop))
}

/// As [`verify_recovery`] with an explicit quality grid in place of the
/// configured span rule.
pub fn verify_recovery_on(pop: &Population, config: &IdentificationConfig, quality: &[f64]) -> Result<Recovery> {
    config.validate()?;
    let prices = config.prices();
    let got = distinct_count(&prices);
    if got < config.max_order + 1 {
        return Err(Error::InsufficientPrices { needed: config.max_order + 1, got });
    }
    let surface = demand::quality_demand_surface(pop, quality, &prices)?;
    let slices: Vec<SliceDistribution> = prices
        .par_iter()
        .map(|&p| slice_from_surface(&surface, p, config.tail_bound))
        .collect::<Result<_>>()?;
    let recovered = recover_cross_moments(&slices, config.max_order)?;
    let reference = pop.moments(config.max_order)?;
    let (max_relative_error, worst_entry) = recovered.max_relative_error(&reference);
    let report = RecoveryReport {
        max_relative_error,
        worst_entry,
        recovered_mean_vm: recovered.get(0, 1),
        prices,
        quality_span: (quality[0], quality[quality.len() - 1]),
        quality_points: quality.len(),
        conditions: (1..=config.max_order).map(|n| recovered.diagnostic(0, n)).collect(),
        tail_mass: slices.iter().map(|s| s.tail_mass).fold(0.0, f64::max),
        max_repair: slices.iter().map(|s| s.repair_magnitude).fold(0.0, f64::max),
        recovered,
        reference,
    };
    Ok(Recovery { report, surface })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Marginal;
    use crate::population::{make_low_population, RatioMarginalSpec};

    fn slice_of(pop: &Population, p: f64, q: &[f64]) -> SliceDistribution {
        let surface = demand::quality_demand_surface(pop, q, &[p]).unwrap();
        slice_from_surface(&surface, p, 1e-6).unwrap()
    }

    #[test]
    fn pava() {
        assert_eq!(isotonic(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(isotonic(&[0.0, 0.5, 1.0]), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn point_mass_slice() {
        let pop = Population::point_mass(1.0, 1.0).unwrap();
        let q = grid::uniform(-2.0, 2.0, 401);
        let s = slice_of(&pop, 0.5, &q);
        for (w, f) in s.w_grid.iter().zip(&s.cdf) {
            assert_eq!(*f, if *w > 0.5 + 1e-12 { 1.0 } else { 0.0 });
        }
        let m = slice_moments(&s, 3);
        let h = 0.01;
        for (i, v) in m.iter().enumerate() {
            assert!((v - 0.5f64.powi(i as i32 + 1)).abs() <= h * (i + 1) as f64, "{v}");
        }
        let surface = demand::quality_demand_surface(&pop, &q, &[0.5]).unwrap();
        assert!(matches!(slice_from_surface(&surface, 0.7, 1e-6), Err(Error::PriceNotInSurface(_))));
    }

    #[test]
    fn uniform_slice_at_zero_price_like() {
        // W_p = v^K − p with v^K ~ U[0,1]; p small approximates W_0 = v^K
        let pop = Population::value_product(Marginal::Uniform { lo: 0.0, hi: 1.0 }, Marginal::Point { value: 1.0 })
            .unwrap();
        let q = grid::uniform(-1.5, 0.5, 4001);
        let p = 1e-9;
        let s = slice_of(&pop, p, &q);
        let mid = s.w_grid.len() / 2;
        assert!((0.0..=1.0).contains(&s.cdf[mid]));
        for (w, f) in s.w_grid.iter().zip(&s.cdf) {
            assert!((f - w.clamp(0.0, 1.0)).abs() < 1e-8);
        }
        let m = slice_moments(&s, 2);
        let oracle = quadrature::integrate(|x| x * x, 0.0, 1.0, 1e-12).unwrap();
        assert!((m[1] - oracle).abs() < 1e-6, "{}", m[1]);
    }

    #[test]
    fn symmetric_slice_odd_moments_vanish() {
        let pop = Population::value_product(Marginal::Uniform { lo: 0.0, hi: 2.0 }, Marginal::Point { value: 1.0 })
            .unwrap();
        let q = grid::uniform(-1.5, 1.5, 3001);
        let m = slice_moments(&slice_of(&pop, 1.0, &q), 3);
        assert!(m[0].abs() < 1e-12 && m[2].abs() < 1e-12, "{m:?}");
    }

    #[test]
    fn tail_mass_is_enforced() {
        let pop = Population::value_product(Marginal::Uniform { lo: 0.0, hi: 1.0 }, Marginal::Point { value: 1.0 })
            .unwrap();
        let q = grid::uniform(-0.5, 0.5, 101);
        let surface = demand::quality_demand_surface(&pop, &q, &[0.25]).unwrap();
        assert!(matches!(slice_from_surface(&surface, 0.25, 1e-6), Err(Error::TailMassExceeded { .. })));
    }

    #[test]
    fn hand_solved_order_one() {
        let t = solve_cross_moments(&[0.5, 1.0], &[vec![0.75], vec![0.5]], 1).unwrap();
        assert!((t.get(1, 0) - 1.0).abs() < 1e-14);
        assert!((t.get(0, 1) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn point_mass_recovers_ones() {
        let prices = [0.2, 0.5, 0.8];
        let moments: Vec<Vec<f64>> = prices.iter().map(|&p: &f64| vec![1.0 - p, (1.0 - p).powi(2)]).collect();
        let t = solve_cross_moments(&prices, &moments, 2).unwrap();
        for (_, _, v, _) in t.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn insufficient_and_ill_conditioned() {
        let m = vec![vec![0.5, 0.25]; 3];
        assert!(matches!(
            solve_cross_moments(&[0.5, 0.5, 0.5], &m, 2),
            Err(Error::InsufficientPrices { needed: 3, got: 1 })
        ));
        let close = [1.0, 1.0 + 1e-7, 1.0 + 2e-7];
        assert!(matches!(solve_cross_moments(&close, &m, 2), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = IdentificationConfig::new(0.5, 1.5);
        assert!(c.validate().is_ok());
        c.quality_points = 1;
        assert!(c.validate().is_err());
        let c = IdentificationConfig { price_lo: 0.0, ..IdentificationConfig::new(0.5, 1.5) };
        assert!(c.validate().is_err());
        let json = r#"{"price_lo":0.5,"price_hi":1.5,"bogus":1}"#;
        assert!(serde_json::from_str::<IdentificationConfig>(json).is_err());
    }

    #[test]
    fn point_mass_end_to_end() {
        let pop = Population::point_mass(1.0, 1.0).unwrap();
        let config = IdentificationConfig { max_order: 2, n_prices: 5, ..IdentificationConfig::new(0.5, 1.5) };
        let r = verify_recovery(&pop, &config).unwrap().report;
        let step = (r.quality_span.1 - r.quality_span.0) / (r.quality_points - 1) as f64;
        assert!(r.max_relative_error <= 4.0 * step, "{} vs {step}", r.max_relative_error);
    }

    #[test]
    fn low_family_mean_recovered() {
        let pop = make_low_population(RatioMarginalSpec::uniform(1.0, 2.0).unwrap(), 0.5).unwrap();
        let config = IdentificationConfig { max_order: 2, quality_points: 2048, ..IdentificationConfig::new(0.5, 1.5) };
        let r = verify_recovery(&pop, &config).unwrap().report;
        assert!((r.recovered_mean_vm - 1.0).abs() < 1e-3, "{}", r.recovered_mean_vm);
        let same = IdentificationConfig { price_hi: 0.5, ..config };
        assert!(matches!(verify_recovery(&pop, &same), Err(Error::InsufficientPrices { .. })));
    }
}
