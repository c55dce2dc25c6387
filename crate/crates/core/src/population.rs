//! Joint laws of (v^K, v^M): construction, densities, sampling, the induced
//! law of the ratio r = v^K / v^M, and cross-moments.
//!
//! The counterexample populations are built in ratio coordinates: r has
//! density g on [r_lo, r_hi] and, given r, v^M is a normal truncated
//! symmetrically about h(r)/g(r). Symmetric truncation keeps the conditional
//! mean at h(r)/g(r), so E[v^M] = ∫ h(r) dr while the ratio law (and hence
//! demand) stays g.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{Marginal, PiecewiseLinear, TruncatedNormal};
use crate::error::{Error, Result};
use crate::moments::MomentTable;
use crate::quadrature::{self, ABS_TOL};

/// Allowed deviation of a ratio density's total mass from one.
pub const MASS_TOL: f64 = 1e-8;

const SCAN_POINTS: usize = 2049;

/// Law of r = v^K / v^M on a bounded interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RatioMarginalSpec {
    Uniform {
        r_lo: f64,
        r_hi: f64,
    },
    /// Triangular density; the mode defaults to the midpoint.
    Triangular {
        r_lo: f64,
        r_hi: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<f64>,
    },
    /// Piecewise-linear density through `(r, g)` knots.
    Tabulated { table: PiecewiseLinear },
}

impl RatioMarginalSpec {
    pub fn uniform(r_lo: f64, r_hi: f64) -> Result<Self> {
        let spec = RatioMarginalSpec::Uniform { r_lo, r_hi };
        spec.validate()?;
        Ok(spec)
    }

    /// Tabulated density rescaled to unit mass.
    pub fn tabulated_normalized(points: Vec<(f64, f64)>) -> Result<Self> {
        let raw = PiecewiseLinear::new(points)?;
        let total = raw.total();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidInput { field: "table", reason: format!("density has mass {total}") });
        }
        let table = PiecewiseLinear::new(raw.points().into_iter().map(|(r, g)| (r, g / total)).collect())?;
        let spec = RatioMarginalSpec::Tabulated { table };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let field = "ratio";
        let (lo, hi) = (self.r_lo(), self.r_hi());
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::InvalidInput { field, reason: format!("need 0 <= r_lo < r_hi < inf, got [{lo}, {hi}]") });
        }
        match self {
            RatioMarginalSpec::Uniform { .. } => Ok(()),
            RatioMarginalSpec::Triangular { mode, .. } => match mode {
                Some(m) if !(lo..=hi).contains(m) => {
                    Err(Error::InvalidInput { field, reason: format!("mode {m} outside [{lo}, {hi}]") })
                }
                _ => Ok(()),
            },
            RatioMarginalSpec::Tabulated { table } => {
                if table.values().iter().any(|g| *g < 0.0) {
                    return Err(Error::InvalidInput { field, reason: "negative density knot".into() });
                }
                if (table.total() - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidInput {
                        field,
                        reason: format!("density integrates to {} (tolerance {MASS_TOL:e})", table.total()),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn r_lo(&self) -> f64 {
        match self {
            RatioMarginalSpec::Uniform { r_lo, .. } | RatioMarginalSpec::Triangular { r_lo, .. } => *r_lo,
            RatioMarginalSpec::Tabulated { table } => table.lo(),
        }
    }

    pub fn r_hi(&self) -> f64 {
        match self {
            RatioMarginalSpec::Uniform { r_hi, .. } | RatioMarginalSpec::Triangular { r_hi, .. } => *r_hi,
            RatioMarginalSpec::Tabulated { table } => table.hi(),
        }
    }

    fn mode(&self) -> f64 {
        match self {
            RatioMarginalSpec::Triangular { r_lo, r_hi, mode } => mode.unwrap_or(0.5 * (r_lo + r_hi)),
            _ => f64::NAN,
        }
    }

    /// Interior points where the density is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            RatioMarginalSpec::Uniform { .. } => Vec::new(),
            RatioMarginalSpec::Triangular { .. } => vec![self.mode()],
            RatioMarginalSpec::Tabulated { table } => table.knots().to_vec(),
        }
    }

    pub fn pdf(&self, r: f64) -> f64 {
        let (a, b) = (self.r_lo(), self.r_hi());
        match self {
            RatioMarginalSpec::Uniform { .. } => {
                if (a..=b).contains(&r) {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            RatioMarginalSpec::Triangular { .. } => {
                let c = self.mode();
                if !(a..=b).contains(&r) {
                    0.0
                } else if r < c {
                    2.0 * (r - a) / ((b - a) * (c - a))
                } else if c < b {
                    2.0 * (b - r) / ((b - a) * (b - c))
                } else {
                    2.0 / (b - a)
                }
            }
            RatioMarginalSpec::Tabulated { table } => table.eval(r),
        }
    }

    pub fn cdf(&self, r: f64) -> f64 {
        let (a, b) = (self.r_lo(), self.r_hi());
        if r <= a {
            return 0.0;
        }
        if r >= b {
            return 1.0;
        }
        match self {
            RatioMarginalSpec::Uniform { .. } => (r - a) / (b - a),
            RatioMarginalSpec::Triangular { .. } => {
                let c = self.mode();
                if r < c {
                    (r - a).powi(2) / ((b - a) * (c - a))
                } else {
                    1.0 - (b - r).powi(2) / ((b - a) * (b - c))
                }
            }
            RatioMarginalSpec::Tabulated { table } => table.integral_to(r).min(1.0),
        }
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        let (a, b) = (self.r_lo(), self.r_hi());
        match self {
            RatioMarginalSpec::Uniform { .. } => a + u * (b - a),
            RatioMarginalSpec::Triangular { .. } => {
                let c = self.mode();
                if u < (c - a) / (b - a) {
                    a + (u * (b - a) * (c - a)).sqrt()
                } else {
                    b - ((1.0 - u) * (b - a) * (b - c)).sqrt()
                }
            }
            RatioMarginalSpec::Tabulated { table } => table.inverse_integral(u * table.total()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inverse_cdf(rng.random::<f64>())
    }

    /// ∫_a^b f(r) g(r) dr, split at the density's kinks.
    pub fn integrate_weighted<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
        let a = a.max(self.r_lo());
        let b = b.min(self.r_hi());
        if b <= a {
            return Ok(0.0);
        }
        match self {
            RatioMarginalSpec::Tabulated { table } => {
                // fixed panels per cell; the interpolant is linear there
                let mut edges: Vec<f64> = table.knots().iter().copied().filter(|x| *x > a && *x < b).collect();
                edges.insert(0, a);
                edges.push(b);
                let g = |r: f64| f(r) * table.eval(r);
                Ok(edges.windows(2).map(|w| quadrature::fixed(&g, w[0], w[1])).sum())
            }
            _ => quadrature::integrate_with_breaks(|r| f(r) * self.pdf(r), a, b, &self.kinks(), tol),
        }
    }

    /// E[r^j].
    pub fn raw_moment(&self, j: usize) -> Result<f64> {
        match self {
            RatioMarginalSpec::Uniform { r_lo, r_hi } => {
                Ok(Marginal::Uniform { lo: *r_lo, hi: *r_hi }.raw_moment(j))
            }
            _ => self.integrate_weighted(|r| r.powi(j as i32), self.r_lo(), self.r_hi(), ABS_TOL),
        }
    }

    /// Law of c·r.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        match self {
            RatioMarginalSpec::Uniform { r_lo, r_hi } => RatioMarginalSpec::uniform(c * r_lo, c * r_hi),
            RatioMarginalSpec::Triangular { r_lo, r_hi, mode } => Ok(RatioMarginalSpec::Triangular {
                r_lo: c * r_lo,
                r_hi: c * r_hi,
                mode: mode.map(|m| c * m),
            }),
            RatioMarginalSpec::Tabulated { table } => RatioMarginalSpec::tabulated_normalized(
                table.points().into_iter().map(|(r, g)| (c * r, g / c)).collect(),
            ),
        }
    }
}

/// The function h(r) that fixes E[v^M | r] = h(r) / g(r).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum HFunction {
    /// h(r) = r − r_lo + δ.
    Low { delta: f64 },
    /// h(r) = 1 / √(r − r_lo + δ).
    High { delta: f64 },
    Custom { table: PiecewiseLinear },
}

impl HFunction {
    pub fn eval(&self, r: f64, r_lo: f64) -> f64 {
        match self {
            HFunction::Low { delta } => r - r_lo + delta,
            HFunction::High { delta } => 1.0 / (r - r_lo + delta).sqrt(),
            HFunction::Custom { table } => table.eval(r),
        }
    }

    /// ∫_a^b h(r) dr.
    pub fn integral(&self, a: f64, b: f64, r_lo: f64) -> f64 {
        match self {
            HFunction::Low { delta } => {
                let anti = |r: f64| 0.5 * (r - r_lo).powi(2) + delta * r;
                anti(b) - anti(a)
            }
            HFunction::High { delta } => 2.0 * ((b - r_lo + delta).sqrt() - (a - r_lo + delta).sqrt()),
            HFunction::Custom { table } => table.integral_to(b) - table.integral_to(a),
        }
    }
}

/// Half-width ε(r) of the truncation band around the conditional mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// ε(r) = h(r) / (2 g(r)).
    #[default]
    HalfMean,
    Fixed(f64),
}

fn default_sigma_rule() -> f64 {
    0.5
}

/// Conditional law of v^M given r.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalSpec {
    pub h: HFunction,
    #[serde(default)]
    pub epsilon_rule: EpsilonRule,
    /// Pre-truncation standard deviation as a multiple of ε(r).
    #[serde(default = "default_sigma_rule")]
    pub sigma_rule: f64,
}

impl ConditionalSpec {
    pub fn new(h: HFunction) -> Self {
        Self { h, epsilon_rule: EpsilonRule::HalfMean, sigma_rule: default_sigma_rule() }
    }
}

/// First factor of a product population.
#[derive(Debug, Clone, PartialEq)]
pub enum ProductFactor {
    /// r independent of v^M; v^K = r·v^M.
    Ratio(RatioMarginalSpec),
    /// v^K independent of v^M.
    GoodValue(Marginal),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub population: Population,
}

/// A joint law of (v^K, v^M) with v^K ≥ 0 and bounded, strictly positive v^M.
/// The quality weight v^Q is fixed to one and carries no field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PopulationDoc", into = "PopulationDoc")]
pub enum Population {
    Product { factor: ProductFactor, vm: Marginal },
    RatioConditional { ratio: RatioMarginalSpec, cond: ConditionalSpec },
    PointMass { vk: f64, vm: f64 },
    Mixture(Vec<Component>),
}

/// Bounding boxes of the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Support {
    pub r_lo: f64,
    pub r_hi: f64,
    pub vk_lo: f64,
    pub vk_hi: f64,
    pub vm_lo: f64,
    pub vm_hi: f64,
}

impl Support {
    fn union(self, o: Support) -> Support {
        Support {
            r_lo: self.r_lo.min(o.r_lo),
            r_hi: self.r_hi.max(o.r_hi),
            vk_lo: self.vk_lo.min(o.vk_lo),
            vk_hi: self.vk_hi.max(o.vk_hi),
            vm_lo: self.vm_lo.min(o.vm_lo),
            vm_hi: self.vm_hi.max(o.vm_hi),
        }
    }
}

/// Law of r induced by a population: weighted continuous parts and atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioDistribution {
    parts: Vec<(f64, RatioPart)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RatioPart {
    Continuous(RatioMarginalSpec),
    /// Point mass at r = vk / vm. Comparisons use vk against r·vm, the
    /// arithmetic of the purchase rule.
    Atom { vk: f64, vm: f64 },
    /// r = v^K / v^M for independent, not both degenerate, v^K and v^M.
    Independent { vk: Marginal, vm: Marginal },
}

impl RatioPart {
    fn atom_at(vk: f64, vm: f64) -> Self {
        RatioPart::Atom { vk, vm }
    }
}

impl RatioDistribution {
    pub fn parts(&self) -> &[(f64, RatioPart)] {
        &self.parts
    }

    /// The single continuous spec, when the law is exactly one.
    pub fn as_spec(&self) -> Option<&RatioMarginalSpec> {
        match self.parts.as_slice() {
            [(_, RatioPart::Continuous(spec))] => Some(spec),
            _ => None,
        }
    }

    pub fn has_atoms(&self) -> bool {
        self.parts.iter().any(|(_, p)| matches!(p, RatioPart::Atom { .. }))
    }

    pub fn r_lo(&self) -> f64 {
        self.parts
            .iter()
            .map(|(_, p)| match p {
                RatioPart::Continuous(s) => s.r_lo(),
                RatioPart::Independent { vk, vm } => vk.bounds().0 / vm.bounds().1,
                RatioPart::Atom { vk, vm } => vk / vm,
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn r_hi(&self) -> f64 {
        self.parts
            .iter()
            .map(|(_, p)| match p {
                RatioPart::Continuous(s) => s.r_hi(),
                RatioPart::Independent { vk, vm } => vk.bounds().1 / vm.bounds().0,
                RatioPart::Atom { vk, vm } => vk / vm,
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Density of the continuous part.
    pub fn pdf(&self, r: f64) -> f64 {
        self.parts
            .iter()
            .map(|(w, p)| match p {
                RatioPart::Continuous(s) => w * s.pdf(r),
                RatioPart::Independent { vk, vm } => w * value_product_ratio_pdf(vk, vm, r),
                RatioPart::Atom { .. } => 0.0,
            })
            .sum()
    }

    /// G(r) = P(ratio ≤ r).
    pub fn cdf(&self, r: f64) -> f64 {
        self.parts
            .iter()
            .map(|(w, p)| match p {
                RatioPart::Continuous(s) => w * s.cdf(r),
                RatioPart::Independent { vk, vm } => w * value_product_ratio_cdf(vk, vm, r),
                RatioPart::Atom { vk, vm } => {
                    if *vk <= r * vm {
                        *w
                    } else {
                        0.0
                    }
                }
            })
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// P(ratio ≥ r); differs from 1 − G(r) only at atoms.
    pub fn survival_inclusive(&self, r: f64) -> f64 {
        let at: f64 = self
            .parts
            .iter()
            .map(|(w, p)| match p {
                RatioPart::Atom { vk, vm } if *vk == r * vm => *w,
                _ => 0.0,
            })
            .sum();
        (1.0 - self.cdf(r) + at).clamp(0.0, 1.0)
    }

    /// `(r, g, G)` rows on the given grid; atoms contribute to G only.
    pub fn tabulate(&self, grid: &[f64]) -> Vec<(f64, f64, f64)> {
        grid.iter().map(|&r| (r, self.pdf(r), self.cdf(r))).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, grid: &[f64], mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,g,G")?;
        for (r, g, big_g) in self.tabulate(grid) {
            writeln!(w, "{},{},{}", crate::fmt_f64(r), crate::fmt_f64(g), crate::fmt_f64(big_g))?;
        }
        Ok(())
    }
}

fn scan(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    (0..SCAN_POINTS).map(move |i| if i == SCAN_POINTS - 1 { hi } else { lo + step * i as f64 })
}

impl Population {
    pub fn point_mass(vk: f64, vm: f64) -> Result<Self> {
        let p = Population::PointMass { vk, vm };
        p.validate()?;
        Ok(p)
    }

    /// r ~ `ratio` independent of v^M ~ `vm`.
    pub fn ratio_product(ratio: RatioMarginalSpec, vm: Marginal) -> Result<Self> {
        let p = Population::Product { factor: ProductFactor::Ratio(ratio), vm };
        p.validate()?;
        Ok(p)
    }

    /// v^K ~ `vk` independent of v^M ~ `vm`.
    pub fn value_product(vk: Marginal, vm: Marginal) -> Result<Self> {
        let p = Population::Product { factor: ProductFactor::GoodValue(vk), vm };
        p.validate()?;
        Ok(p)
    }

    pub fn ratio_conditional(ratio: RatioMarginalSpec, cond: ConditionalSpec) -> Result<Self> {
        let p = Population::RatioConditional { ratio, cond };
        p.validate()?;
        Ok(p)
    }

    pub fn mixture(components: Vec<(f64, Population)>) -> Result<Self> {
        let p = Population::Mixture(
            components
                .into_iter()
                .map(|(weight, population)| Component { weight, population })
                .collect(),
        );
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidPopulation(s));
        match self {
            Population::PointMass { vk, vm } => {
                if !(vk.is_finite() && *vk >= 0.0) {
                    return bad(format!("v^K = {vk} must be finite and non-negative"));
                }
                if !(vm.is_finite() && *vm > 0.0) {
                    return bad(format!("v^M = {vm} must be finite and positive"));
                }
                Ok(())
            }
            Population::Product { factor, vm } => {
                vm.validate("vm")?;
                if vm.bounds().0 <= 0.0 {
                    return bad(format!("v^M support must be bounded away from 0, got lower bound {}", vm.bounds().0));
                }
                match factor {
                    ProductFactor::Ratio(ratio) => ratio.validate(),
                    ProductFactor::GoodValue(vk) => {
                        vk.validate("good_value")?;
                        if vk.bounds().0 < 0.0 {
                            return bad(format!("v^K support starts below 0 at {}", vk.bounds().0));
                        }
                        Ok(())
                    }
                }
            }
            Population::RatioConditional { ratio, cond } => {
                ratio.validate()?;
                if !(cond.sigma_rule > 0.0 && cond.sigma_rule.is_finite()) {
                    return bad(format!("sigma_rule = {} must be positive", cond.sigma_rule));
                }
                match cond.h {
                    HFunction::Low { delta } | HFunction::High { delta } if !(delta > 0.0 && delta.is_finite()) => {
                        return bad(format!("delta = {delta} must be positive"));
                    }
                    _ => {}
                }
                let (lo, hi) = (ratio.r_lo(), ratio.r_hi());
                let mut points: Vec<f64> = scan(lo, hi).collect();
                points.extend(ratio.kinks().into_iter().filter(|r| (lo..=hi).contains(r)));
                if let HFunction::Custom { table } = &cond.h {
                    points.extend(table.knots().iter().copied().filter(|r| (lo..=hi).contains(r)));
                }
                for r in points {
                    let g = ratio.pdf(r);
                    let h = cond.h.eval(r, lo);
                    if !(g > 0.0 && g.is_finite()) {
                        return bad(format!("ratio density must be positive on its support, g({r}) = {g}"));
                    }
                    if !(h > 0.0 && h.is_finite()) {
                        return bad(format!("h({r}) = {h} must be positive and finite"));
                    }
                    if let EpsilonRule::Fixed(eps) = cond.epsilon_rule {
                        let mean = h / g;
                        if !(eps > 0.0 && eps < mean) {
                            return bad(format!("epsilon {eps} must lie in (0, {mean}) at r = {r}"));
                        }
                    }
                }
                Ok(())
            }
            Population::Mixture(components) => {
                if components.is_empty() {
                    return bad("mixture has no components".into());
                }
                let mut total = 0.0;
                for c in components {
                    if !(c.weight > 0.0 && c.weight.is_finite()) {
                        return bad(format!("mixture weight {} must be positive", c.weight));
                    }
                    total += c.weight;
                    c.population.validate()?;
                }
                if (total - 1.0).abs() > MASS_TOL {
                    return bad(format!("mixture weights sum to {total}"));
                }
                Ok(())
            }
        }
    }

    /// Truncated-normal law of v^M given r, for ratio-conditional populations.
    pub fn conditional_vm(&self, r: f64) -> Option<TruncatedNormal> {
        match self {
            Population::RatioConditional { ratio, cond } => Some(conditional_law(ratio, cond, r)),
            _ => None,
        }
    }

    pub fn support(&self) -> Support {
        match self {
            Population::PointMass { vk, vm } => Support {
                r_lo: vk / vm,
                r_hi: vk / vm,
                vk_lo: *vk,
                vk_hi: *vk,
                vm_lo: *vm,
                vm_hi: *vm,
            },
            Population::Product { factor, vm } => {
                let (m_lo, m_hi) = vm.bounds();
                match factor {
                    ProductFactor::Ratio(ratio) => Support {
                        r_lo: ratio.r_lo(),
                        r_hi: ratio.r_hi(),
                        vk_lo: ratio.r_lo() * m_lo,
                        vk_hi: ratio.r_hi() * m_hi,
                        vm_lo: m_lo,
                        vm_hi: m_hi,
                    },
                    ProductFactor::GoodValue(vk) => {
                        let (k_lo, k_hi) = vk.bounds();
                        Support {
                            r_lo: k_lo / m_hi,
                            r_hi: k_hi / m_lo,
                            vk_lo: k_lo,
                            vk_hi: k_hi,
                            vm_lo: m_lo,
                            vm_hi: m_hi,
                        }
                    }
                }
            }
            Population::RatioConditional { ratio, cond } => {
                let mut s = Support {
                    r_lo: ratio.r_lo(),
                    r_hi: ratio.r_hi(),
                    vk_lo: f64::INFINITY,
                    vk_hi: 0.0,
                    vm_lo: f64::INFINITY,
                    vm_hi: 0.0,
                };
                for r in scan(ratio.r_lo(), ratio.r_hi()) {
                    let tn = conditional_law(ratio, cond, r);
                    s.vm_lo = s.vm_lo.min(tn.lower());
                    s.vm_hi = s.vm_hi.max(tn.upper());
                    s.vk_lo = s.vk_lo.min(r * tn.lower());
                    s.vk_hi = s.vk_hi.max(r * tn.upper());
                }
                s
            }
            Population::Mixture(components) => components
                .iter()
                .map(|c| c.population.support())
                .reduce(Support::union)
                .expect("validated mixture is non-empty"),
        }
    }

    /// Joint density f(v^K, v^M).
    pub fn density(&self, vk: f64, vm: f64) -> Result<f64> {
        if vm <= 0.0 {
            return match self.has_density() {
                Some(reason) => Err(Error::NoDensity(reason)),
                None => Ok(0.0),
            };
        }
        match self {
            Population::PointMass { .. } => Err(Error::NoDensity("point mass")),
            Population::Product { factor, vm: vm_law } => {
                if vm_law.is_point() {
                    return Err(Error::NoDensity("degenerate v^M marginal"));
                }
                match factor {
                    ProductFactor::Ratio(ratio) => Ok(ratio.pdf(vk / vm) * vm_law.pdf(vm) / vm),
                    ProductFactor::GoodValue(vk_law) => {
                        if vk_law.is_point() {
                            return Err(Error::NoDensity("degenerate v^K marginal"));
                        }
                        Ok(vk_law.pdf(vk) * vm_law.pdf(vm))
                    }
                }
            }
            Population::RatioConditional { ratio, cond } => {
                let r = vk / vm;
                let g = ratio.pdf(r);
                if g == 0.0 {
                    return Ok(0.0);
                }
                Ok(g * conditional_law(ratio, cond, r).pdf(vm) / vm)
            }
            Population::Mixture(components) => {
                let mut total = 0.0;
                for c in components {
                    total += c.weight * c.population.density(vk, vm)?;
                }
                Ok(total)
            }
        }
    }

    /// `Some(reason)` when the population has no joint density.
    fn has_density(&self) -> Option<&'static str> {
        match self {
            Population::PointMass { .. } => Some("point mass"),
            Population::Product { factor, vm } => {
                if vm.is_point() {
                    Some("degenerate v^M marginal")
                } else if matches!(factor, ProductFactor::GoodValue(m) if m.is_point()) {
                    Some("degenerate v^K marginal")
                } else {
                    None
                }
            }
            Population::RatioConditional { .. } => None,
            Population::Mixture(cs) => cs.iter().find_map(|c| c.population.has_density()),
        }
    }

    /// ∫∫ f by nested quadrature. Ratio-coordinate forms are integrated over
    /// (r, v^M) with Jacobian v^M so the inner limits follow the support.
    pub fn total_mass(&self) -> Result<f64> {
        if let Some(reason) = self.has_density() {
            return Err(Error::NoDensity(reason));
        }
        let in_ratio_coords = |ratio: &RatioMarginalSpec, limits: &dyn Fn(f64) -> (f64, f64)| {
            let outer = |r: f64| {
                let (lo, hi) = limits(r);
                quadrature::integrate(|vm| self.density(r * vm, vm).unwrap_or(f64::NAN) * vm, lo, hi, ABS_TOL * 1e-2)
                    .unwrap_or(f64::NAN)
            };
            let v = quadrature::integrate_with_breaks(outer, ratio.r_lo(), ratio.r_hi(), &ratio.kinks(), ABS_TOL)?;
            Ok(v)
        };
        match self {
            Population::Product { factor: ProductFactor::Ratio(ratio), vm } => {
                let b = vm.bounds();
                in_ratio_coords(ratio, &|_| b)
            }
            Population::Product { factor: ProductFactor::GoodValue(vk), vm } => {
                let (k_lo, k_hi) = vk.bounds();
                let (m_lo, m_hi) = vm.bounds();
                quadrature::integrate_2d(
                    |x, y| self.density(x, y).unwrap_or(f64::NAN),
                    k_lo,
                    k_hi,
                    |_| (m_lo, m_hi),
                    ABS_TOL,
                )
            }
            Population::RatioConditional { ratio, cond } => in_ratio_coords(ratio, &|r| {
                let tn = conditional_law(ratio, cond, r);
                (tn.lower(), tn.upper())
            }),
            Population::Mixture(components) => {
                components.iter().map(|c| Ok(c.weight * c.population.total_mass()?)).sum()
            }
            Population::PointMass { .. } => unreachable!("handled above"),
        }
    }

    /// `n` draws of (v^K, v^M), deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
        if n == 0 {
            return Err(Error::InvalidInput { field: "n", reason: "need at least one draw".into() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| self.draw(&mut rng)).collect())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            Population::PointMass { vk, vm } => (*vk, *vm),
            Population::Product { factor, vm } => {
                let m = vm.sample(rng);
                match factor {
                    ProductFactor::Ratio(ratio) => (ratio.sample(rng) * m, m),
                    ProductFactor::GoodValue(vk) => (vk.sample(rng), m),
                }
            }
            Population::RatioConditional { ratio, cond } => {
                let r = ratio.sample(rng);
                let m = conditional_law(ratio, cond, r).sample(rng);
                (r * m, m)
            }
            Population::Mixture(components) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for c in components {
                    acc += c.weight;
                    if u < acc {
                        return c.population.draw(rng);
                    }
                }
                components.last().unwrap().population.draw(rng)
            }
        }
    }

    /// Law of r = v^K / v^M, g(r) = ∫ f(r·v, v)·v dv.
    pub fn ratio_marginal(&self) -> Result<RatioDistribution> {
        if self.support().vm_lo <= 0.0 {
            return Err(Error::DegenerateRatio("v^M has mass at 0".into()));
        }
        let single = |part| Ok(RatioDistribution { parts: vec![(1.0, part)] });
        match self {
            Population::PointMass { vk, vm } => single(RatioPart::atom_at(*vk, *vm)),
            Population::Product { factor: ProductFactor::Ratio(ratio), .. }
            | Population::RatioConditional { ratio, .. } => single(RatioPart::Continuous(ratio.clone())),
            Population::Product { factor: ProductFactor::GoodValue(vk), vm } => match (vk, vm) {
                (Marginal::Point { value: k }, Marginal::Point { value: m }) => single(RatioPart::atom_at(*k, *m)),
                (Marginal::Uniform { lo, hi }, Marginal::Point { value: m }) => {
                    single(RatioPart::Continuous(RatioMarginalSpec::uniform(lo / m, hi / m)?))
                }
                _ => single(RatioPart::Independent { vk: vk.clone(), vm: vm.clone() }),
            },
            Population::Mixture(components) => {
                let mut parts = Vec::new();
                for c in components {
                    for (w, part) in c.population.ratio_marginal()?.parts {
                        parts.push((c.weight * w, part));
                    }
                }
                Ok(RatioDistribution { parts })
            }
        }
    }

    /// `(P(r ∈ [a, b]), E[v^M · 1{r ∈ [a, b]}])`.
    pub fn ratio_window(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        match self {
            Population::PointMass { vk, vm } => {
                let r = vk / vm;
                Ok(if (a..=b).contains(&r) { (1.0, *vm) } else { (0.0, 0.0) })
            }
            Population::Product { factor: ProductFactor::Ratio(ratio), vm } => {
                let mass = ratio.cdf(b) - ratio.cdf(a);
                Ok((mass, mass * vm.raw_moment(1)))
            }
            Population::RatioConditional { ratio, cond } => {
                let (lo, hi) = (a.max(ratio.r_lo()), b.min(ratio.r_hi()));
                if hi <= lo {
                    return Ok((0.0, 0.0));
                }
                Ok((ratio.cdf(hi) - ratio.cdf(lo), cond.h.integral(lo, hi, ratio.r_lo())))
            }
            Population::Product { factor: ProductFactor::GoodValue(vk), vm } => value_product_window(vk, vm, a, b),
            Population::Mixture(components) => {
                let (mut mass, mut weighted) = (0.0, 0.0);
                for c in components {
                    let (m, w) = c.population.ratio_window(a, b)?;
                    mass += c.weight * m;
                    weighted += c.weight * w;
                }
                Ok((mass, weighted))
            }
        }
    }

    /// Cross-moments E[(v^K)^j (v^M)^k], j + k ≤ `max_order`, by closed form
    /// or adaptive quadrature. Diagnostics hold the quadrature tolerance used
    /// (zero for closed forms).
    pub fn moments(&self, max_order: usize) -> Result<MomentTable> {
        if max_order == 0 {
            return Err(Error::InvalidInput { field: "max_order", reason: "must be at least 1".into() });
        }
        let mut table = MomentTable::new(max_order);
        for n in 1..=max_order {
            for k in 0..=n {
                let j = n - k;
                let (v, d) = self.cross_moment(j, k)?;
                table.set(j, k, v, d);
            }
        }
        Ok(table)
    }

    fn cross_moment(&self, j: usize, k: usize) -> Result<(f64, f64)> {
        match self {
            Population::PointMass { vk, vm } => Ok((vk.powi(j as i32) * vm.powi(k as i32), 0.0)),
            Population::Product { factor, vm } => match factor {
                ProductFactor::Ratio(ratio) => {
                    let d = if matches!(ratio, RatioMarginalSpec::Uniform { .. }) { 0.0 } else { ABS_TOL };
                    Ok((ratio.raw_moment(j)? * vm.raw_moment(j + k), d))
                }
                ProductFactor::GoodValue(vk) => Ok((vk.raw_moment(j) * vm.raw_moment(k), 0.0)),
            },
            Population::RatioConditional { ratio, cond } => {
                let v = ratio.integrate_weighted(
                    |r| r.powi(j as i32) * conditional_law(ratio, cond, r).raw_moment(j + k),
                    ratio.r_lo(),
                    ratio.r_hi(),
                    ABS_TOL,
                )?;
                Ok((v, ABS_TOL))
            }
            Population::Mixture(components) => {
                let (mut v, mut d) = (0.0, 0.0);
                for c in components {
                    let (cv, cd) = c.population.cross_moment(j, k)?;
                    v += c.weight * cv;
                    d += c.weight * cd;
                }
                Ok((v, d))
            }
        }
    }

    /// Monte Carlo cross-moments; diagnostics are standard errors.
    pub fn moments_mc(&self, max_order: usize, n: usize, seed: u64) -> Result<MomentTable> {
        let draws = self.sample(n, seed)?;
        Ok(empirical_moments(&draws, max_order))
    }

    /// The same population with v^K multiplied by `c > 0`.
    pub fn scale_good_value(&self, c: f64) -> Result<Population> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput { field: "scale", reason: format!("{c} must be positive") });
        }
        let out = match self {
            Population::PointMass { vk, vm } => Population::PointMass { vk: c * vk, vm: *vm },
            Population::Product { factor, vm } => Population::Product {
                factor: match factor {
                    ProductFactor::Ratio(r) => ProductFactor::Ratio(r.scaled(c)?),
                    ProductFactor::GoodValue(m) => ProductFactor::GoodValue(scale_marginal(m, c)),
                },
                vm: vm.clone(),
            },
            Population::RatioConditional { ratio, cond } => {
                // E[v^M | c r] must equal E[v^M | r], so h'(s) = h(s / c) / c
                let r_lo = ratio.r_lo();
                let table = match &cond.h {
                    HFunction::Custom { table } => {
                        PiecewiseLinear::new(table.points().into_iter().map(|(r, h)| (c * r, h / c)).collect())?
                    }
                    h => PiecewiseLinear::from_fn(c * r_lo, c * ratio.r_hi(), SCAN_POINTS, |s| h.eval(s / c, r_lo) / c)?,
                };
                Population::RatioConditional {
                    ratio: ratio.scaled(c)?,
                    cond: ConditionalSpec { h: HFunction::Custom { table }, ..cond.clone() },
                }
            }
            Population::Mixture(components) => Population::Mixture(
                components
                    .iter()
                    .map(|comp| {
                        Ok(Component { weight: comp.weight, population: comp.population.scale_good_value(c)? })
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        out.validate()?;
        Ok(out)
    }
}

/// Sample moments with standard errors.
pub fn empirical_moments(draws: &[(f64, f64)], max_order: usize) -> MomentTable {
    let n = draws.len() as f64;
    let mut table = MomentTable::new(max_order);
    for order in 1..=max_order {
        for k in 0..=order {
            let j = order - k;
            let (mut s1, mut s2) = (0.0, 0.0);
            for &(vk, vm) in draws {
                let x = vk.powi(j as i32) * vm.powi(k as i32);
                s1 += x;
                s2 += x * x;
            }
            let mean = s1 / n;
            let var = ((s2 / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0);
            table.set(j, k, mean, (var / n).sqrt());
        }
    }
    table
}

fn scale_marginal(m: &Marginal, c: f64) -> Marginal {
    match *m {
        Marginal::Point { value } => Marginal::Point { value: c * value },
        Marginal::Uniform { lo, hi } => Marginal::Uniform { lo: c * lo, hi: c * hi },
        Marginal::ScaledBeta { alpha, beta, lo, hi } => Marginal::ScaledBeta { alpha, beta, lo: c * lo, hi: c * hi },
    }
}

fn conditional_law(ratio: &RatioMarginalSpec, cond: &ConditionalSpec, r: f64) -> TruncatedNormal {
    let mean = cond.h.eval(r, ratio.r_lo()) / ratio.pdf(r);
    let eps = match cond.epsilon_rule {
        EpsilonRule::HalfMean => 0.5 * mean,
        EpsilonRule::Fixed(e) => e,
    };
    TruncatedNormal::new(mean, cond.sigma_rule * eps, eps)
}

/// Ratio density for independent v^K, v^M (not both points).
fn value_product_ratio_pdf(vk: &Marginal, vm: &Marginal, r: f64) -> f64 {
    match (vk, vm) {
        (_, Marginal::Point { value: m }) => m * vk.pdf(r * m),
        (Marginal::Point { value: k }, _) => {
            if r <= 0.0 {
                0.0
            } else {
                vm.pdf(k / r) * k / (r * r)
            }
        }
        _ => {
            let (m_lo, m_hi) = vm.bounds();
            let (k_lo, k_hi) = vk.bounds();
            let breaks = if r > 0.0 { vec![k_lo / r, k_hi / r] } else { Vec::new() };
            quadrature::integrate_with_breaks(|v| vk.pdf(r * v) * vm.pdf(v) * v, m_lo, m_hi, &breaks, ABS_TOL * 1e-2)
                .unwrap_or(f64::NAN)
        }
    }
}

/// P(v^K ≤ r v^M) for independent v^K, v^M (not both points). NaN if the
/// quadrature fails.
fn value_product_ratio_cdf(vk: &Marginal, vm: &Marginal, r: f64) -> f64 {
    match (vk, vm) {
        (_, Marginal::Point { value: m }) => vk.cdf(r * m),
        (Marginal::Point { value: k }, _) => {
            if r <= 0.0 {
                if *k <= 0.0 { 1.0 } else { 0.0 }
            } else {
                vm.survival_inclusive(k / r)
            }
        }
        _ => {
            let (m_lo, m_hi) = vm.bounds();
            let (k_lo, k_hi) = vk.bounds();
            if r * m_hi <= k_lo {
                return 0.0;
            }
            if r * m_lo >= k_hi {
                return 1.0;
            }
            let breaks = if r > 0.0 { vec![k_lo / r, k_hi / r] } else { Vec::new() };
            quadrature::integrate_with_breaks(|v| vk.cdf(r * v) * vm.pdf(v), m_lo, m_hi, &breaks, 1e-13)
                .or_else(|_| quadrature::integrate_with_breaks(|v| vk.cdf(r * v) * vm.pdf(v), m_lo, m_hi, &breaks, ABS_TOL))
                .map(|g| g.clamp(0.0, 1.0))
                .unwrap_or(f64::NAN)
        }
    }
}

fn value_product_window(vk: &Marginal, vm: &Marginal, a: f64, b: f64) -> Result<(f64, f64)> {
    // v^K ∈ [a v, b v] for fixed v^M = v, inclusive at both ends
    let in_window = |v: f64| {
        let atom_at_lower = vk.survival_inclusive(a * v) - (1.0 - vk.cdf(a * v));
        vk.cdf(b * v) - vk.cdf(a * v) + atom_at_lower
    };
    match vm {
        Marginal::Point { value } => {
            let p = in_window(*value);
            Ok((p, p * value))
        }
        _ => {
            let (m_lo, m_hi) = vm.bounds();
            match vk {
                Marginal::Point { value: k } => {
                    // v^M ∈ [k / b, k / a]
                    let lo = if b > 0.0 { k / b } else { f64::INFINITY };
                    let hi = if a > 0.0 { k / a } else { f64::INFINITY };
                    let (lo, hi) = (lo.max(m_lo), hi.min(m_hi));
                    if hi < lo {
                        return Ok((0.0, 0.0));
                    }
                    let mass = vm.cdf(hi) - vm.cdf(lo);
                    let weighted = quadrature::integrate(|v| v * vm.pdf(v), lo, hi, ABS_TOL * 1e-2)?;
                    Ok((mass, weighted))
                }
                _ => {
                    let (k_lo, k_hi) = vk.bounds();
                    let mut breaks = Vec::new();
                    for x in [a, b] {
                        if x > 0.0 {
                            breaks.push(k_lo / x);
                            breaks.push(k_hi / x);
                        }
                    }
                    let tol = ABS_TOL * 1e-2;
                    let mass = quadrature::integrate_with_breaks(|v| in_window(v) * vm.pdf(v), m_lo, m_hi, &breaks, tol)?;
                    let weighted =
                        quadrature::integrate_with_breaks(|v| v * in_window(v) * vm.pdf(v), m_lo, m_hi, &breaks, tol)?;
                    Ok((mass, weighted))
                }
            }
        }
    }
}

/// Largest δ for which h(r) = r − r_lo + δ yields low inequality:
/// 2 g(r_lo) ∫ (r − r_lo) dr over the ratio support.
pub fn low_family_bound(ratio: &RatioMarginalSpec) -> f64 {
    let width = ratio.r_hi() - ratio.r_lo();
    2.0 * ratio.pdf(ratio.r_lo()) * 0.5 * width * width
}

/// Positive root of δ² + (r_hi − r_lo) δ − 1/(16 g(r_lo)²); δ strictly below it
/// guarantees high inequality for h(r) = 1/√(r − r_lo + δ).
pub fn high_family_bound(ratio: &RatioMarginalSpec) -> f64 {
    let width = ratio.r_hi() - ratio.r_lo();
    let g0 = ratio.pdf(ratio.r_lo());
    0.5 * ((width * width + 1.0 / (4.0 * g0 * g0)).sqrt() - width)
}

/// Counterexample population with E[v^M | r] = (r − r_lo + δ) / g(r).
pub fn make_low_population(ratio: RatioMarginalSpec, delta: f64) -> Result<Population> {
    let bound = low_family_bound(&ratio);
    if !(delta > 0.0 && delta <= bound) {
        return Err(Error::BoundViolation { family: "low", delta, bound });
    }
    Population::ratio_conditional(ratio, ConditionalSpec::new(HFunction::Low { delta }))
}

/// Counterexample population with E[v^M | r] = 1 / (g(r) √(r − r_lo + δ)).
pub fn make_high_population(ratio: RatioMarginalSpec, delta: f64) -> Result<Population> {
    let bound = high_family_bound(&ratio);
    if !(delta > 0.0 && delta < bound) {
        return Err(Error::BoundViolation { family: "high", delta, bound });
    }
    Population::ratio_conditional(ratio, ConditionalSpec::new(HFunction::High { delta }))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentDoc {
    weight: f64,
    population: Population,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
enum PopulationDoc {
    /// Exactly one of `ratio` / `good_value` is given.
    Product {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ratio: Option<RatioMarginalSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        good_value: Option<Marginal>,
        vm: Marginal,
    },
    RatioConditional {
        ratio: RatioMarginalSpec,
        conditional: ConditionalSpec,
    },
    PointMass {
        vk: f64,
        vm: f64,
    },
    Mixture {
        components: Vec<ComponentDoc>,
    },
}

impl TryFrom<PopulationDoc> for Population {
    type Error = Error;

    fn try_from(doc: PopulationDoc) -> Result<Self> {
        let pop = match doc {
            PopulationDoc::Product { ratio, good_value, vm } => {
                let factor = match (ratio, good_value) {
                    (Some(r), None) => ProductFactor::Ratio(r),
                    (None, Some(k)) => ProductFactor::GoodValue(k),
                    _ => {
                        return Err(Error::InvalidPopulation(
                            "product form needs exactly one of `ratio` or `good_value`".into(),
                        ))
                    }
                };
                Population::Product { factor, vm }
            }
            PopulationDoc::RatioConditional { ratio, conditional } => {
                Population::RatioConditional { ratio, cond: conditional }
            }
            PopulationDoc::PointMass { vk, vm } => Population::PointMass { vk, vm },
            PopulationDoc::Mixture { components } => Population::Mixture(
                components
                    .into_iter()
                    .map(|c| Component { weight: c.weight, population: c.population })
                    .collect(),
            ),
        };
        pop.validate()?;
        Ok(pop)
    }
}

impl From<Population> for PopulationDoc {
    fn from(p: Population) -> Self {
        match p {
            Population::Product { factor: ProductFactor::Ratio(r), vm } => {
                PopulationDoc::Product { ratio: Some(r), good_value: None, vm }
            }
            Population::Product { factor: ProductFactor::GoodValue(k), vm } => {
                PopulationDoc::Product { ratio: None, good_value: Some(k), vm }
            }
            Population::RatioConditional { ratio, cond } => PopulationDoc::RatioConditional { ratio, conditional: cond },
            Population::PointMass { vk, vm } => PopulationDoc::PointMass { vk, vm },
            Population::Mixture(cs) => PopulationDoc::Mixture {
                components: cs
                    .into_iter()
                    .map(|c| ComponentDoc { weight: c.weight, population: c.population })
                    .collect(),
            },
        }
    }
}
