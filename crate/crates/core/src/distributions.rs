//! One-dimensional building blocks: bounded marginals, the symmetric truncated
//! normal used for conditional money values, and piecewise-linear tables.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use libm::erf;

use crate::error::{Error, Result};

/// Binomial coefficient as a float; small arguments only.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// A bounded univariate law for v^K or v^M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    Point { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// `lo + (hi - lo) * X` with `X ~ Beta(alpha, beta)`.
    ScaledBeta { alpha: f64, beta: f64, lo: f64, hi: f64 },
}

impl Marginal {
    pub fn validate(&self, field: &'static str) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidInput { field, reason });
        match *self {
            Marginal::Point { value } if !value.is_finite() => bad(format!("point value {value} is not finite")),
            Marginal::Uniform { lo, hi } | Marginal::ScaledBeta { lo, hi, .. }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) =>
            {
                bad(format!("need finite lo < hi, got [{lo}, {hi}]"))
            }
            Marginal::ScaledBeta { alpha, beta, .. } if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) => {
                bad(format!("beta shapes must be positive, got ({alpha}, {beta})"))
            }
            _ => Ok(()),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Marginal::Point { value } => (value, value),
            Marginal::Uniform { lo, hi } | Marginal::ScaledBeta { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, Marginal::Point { .. })
    }

    /// Density; zero for a point mass.
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Point { .. } => 0.0,
            Marginal::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Marginal::ScaledBeta { alpha, beta, lo, hi } => {
                if !(lo..=hi).contains(&x) {
                    return 0.0;
                }
                let width = hi - lo;
                let u = (x - lo) / width;
                let log_b = statrs::function::beta::ln_beta(alpha, beta);
                let log_term = |shape: f64, t: f64| if shape == 1.0 { 0.0 } else { (shape - 1.0) * t.ln() };
                (log_term(alpha, u) + log_term(beta, 1.0 - u) - log_b).exp() / width
            }
        }
    }

    /// P(X ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Point { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            Marginal::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Marginal::ScaledBeta { alpha, beta, lo, hi } => {
                if x <= lo {
                    0.0
                } else if x >= hi {
                    1.0
                } else {
                    Beta::new(alpha, beta)
                        .map(|b| b.cdf((x - lo) / (hi - lo)))
                        .unwrap_or(f64::NAN)
                }
            }
        }
    }

    /// P(X ≥ x); differs from `1 - cdf` only at an atom.
    pub fn survival_inclusive(&self, x: f64) -> f64 {
        match *self {
            Marginal::Point { value } => {
                if value >= x {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 1.0 - self.cdf(x),
        }
    }

    /// E[X^k] in closed form.
    pub fn raw_moment(&self, k: usize) -> f64 {
        match *self {
            Marginal::Point { value } => value.powi(k as i32),
            Marginal::Uniform { lo, hi } => {
                let kp = (k + 1) as i32;
                (hi.powi(kp) - lo.powi(kp)) / ((k + 1) as f64 * (hi - lo))
            }
            Marginal::ScaledBeta { alpha, beta, lo, hi } => {
                let width = hi - lo;
                let mut unit = 1.0;
                let mut total = 0.0;
                for i in 0..=k {
                    // unit = E[X^i] for the standard beta
                    total += binomial(k, i) * lo.powi((k - i) as i32) * width.powi(i as i32) * unit;
                    unit *= (alpha + i as f64) / (alpha + beta + i as f64);
                }
                total
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Point { value } => value,
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Marginal::ScaledBeta { alpha, beta, lo, hi } => {
                let b = rand_distr::Beta::new(alpha, beta).expect("validated shapes");
                lo + (hi - lo) * b.sample(rng)
            }
        }
    }
}

/// Normal law with mean `mean` and scale `sd`, truncated to the symmetric band
/// `[mean - half_width, mean + half_width]`. The truncation is symmetric, so the
/// mean is preserved exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub half_width: f64,
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, half_width: f64) -> Self {
        Self { mean, sd, half_width }
    }

    fn c(&self) -> f64 {
        self.half_width / self.sd
    }

    /// P(|Z| ≤ c) for standard normal Z.
    fn band_mass(&self) -> f64 {
        erf(self.c() / std::f64::consts::SQRT_2)
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        if z.abs() > self.c() {
            return 0.0;
        }
        FRAC_1_SQRT_2PI * (-0.5 * z * z).exp() / (self.sd * self.band_mass())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower() {
            return 0.0;
        }
        if x >= self.upper() {
            return 1.0;
        }
        let z = (x - self.mean) / self.sd;
        let zc = self.band_mass();
        ((erf(z / std::f64::consts::SQRT_2) + zc) / (2.0 * zc)).clamp(0.0, 1.0)
    }

    /// E[X^k] via central moments of the truncated standard normal.
    pub fn raw_moment(&self, k: usize) -> f64 {
        let c = self.c();
        let zc = self.band_mass();
        let phi_c = FRAC_1_SQRT_2PI * (-0.5 * c * c).exp();
        let mut central = vec![0.0; k + 1];
        central[0] = 1.0;
        for n in 2..=k {
            if n % 2 == 0 {
                central[n] = (n - 1) as f64 * central[n - 2] - 2.0 * c.powi(n as i32 - 1) * phi_c / zc;
            }
        }
        (0..=k)
            .step_by(2)
            .map(|i| binomial(k, i) * self.mean.powi((k - i) as i32) * self.sd.powi(i as i32) * central[i])
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = self.c();
        let z = if c >= 1.0 {
            loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= c {
                    break z;
                }
            }
        } else {
            loop {
                let z = c * (2.0 * rng.random::<f64>() - 1.0);
                if rng.random::<f64>() <= (-0.5 * z * z).exp() {
                    break z;
                }
            }
        };
        self.mean + self.sd * z
    }
}

/// A piecewise-linear function on sorted knots, zero outside the knot range,
/// with its running integral cached.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let field = "table";
        if points.len() < 2 {
            return Err(Error::InvalidInput { field, reason: "need at least two knots".into() });
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput { field, reason: "non-finite entry".into() });
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput { field, reason: "knots must be strictly increasing".into() });
        }
        let mut cumulative = Vec::with_capacity(xs.len());
        cumulative.push(0.0);
        for i in 1..xs.len() {
            let area = 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
            cumulative.push(cumulative[i - 1] + area);
        }
        Ok(Self { xs, ys, cumulative })
    }

    /// Samples `f` on `n` uniformly spaced knots over [lo, hi].
    pub fn from_fn<F: Fn(f64) -> f64>(lo: f64, hi: f64, n: usize, f: F) -> Result<Self> {
        let n = n.max(2);
        let step = (hi - lo) / (n - 1) as f64;
        Self::new(
            (0..n)
                .map(|i| {
                    let x = if i == n - 1 { hi } else { lo + step * i as f64 };
                    (x, f(x))
                })
                .collect(),
        )
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn lo(&self) -> f64 {
        self.xs[0]
    }

    pub fn hi(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.xs.iter().copied().zip(self.ys.iter().copied()).collect()
    }

    /// Index `i` such that `xs[i] <= x < xs[i + 1]`, for x inside the range.
    fn cell(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => (i - 1).min(self.xs.len() - 2),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < self.lo() || x > self.hi() {
            return 0.0;
        }
        let i = self.cell(x);
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }

    /// ∫_{lo}^{x} of the interpolant.
    pub fn integral_to(&self, x: f64) -> f64 {
        if x <= self.lo() {
            return 0.0;
        }
        if x >= self.hi() {
            return self.total();
        }
        let i = self.cell(x);
        let dx = x - self.xs[i];
        let y = self.eval(x);
        self.cumulative[i] + 0.5 * (self.ys[i] + y) * dx
    }

    /// Smallest x with `integral_to(x) = target`, for a non-negative function.
    pub fn inverse_integral(&self, target: f64) -> f64 {
        let target = target.clamp(0.0, self.total());
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&target)) {
            Ok(i) => return self.xs[i],
            Err(i) => (i.max(1) - 1).min(self.xs.len() - 2),
        };
        let rest = target - self.cumulative[i];
        let width = self.xs[i + 1] - self.xs[i];
        let y0 = self.ys[i];
        let slope = (self.ys[i + 1] - y0) / width;
        // solve y0 t + slope t^2 / 2 = rest for t in [0, width]
        let t = if slope.abs() < 1e-14 * y0.abs().max(1e-300) {
            if y0 > 0.0 {
                rest / y0
            } else {
                0.0
            }
        } else {
            let disc = (y0 * y0 + 2.0 * slope * rest).max(0.0);
            2.0 * rest / (y0 + disc.sqrt())
        };
        self.xs[i] + t.clamp(0.0, width)
    }
}

impl Serialize for PiecewiseLinear {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.points().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PiecewiseLinear {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let points = Vec::<(f64, f64)>::deserialize(d)?;
        PiecewiseLinear::new(points).map_err(serde::de::Error::custom)
    }
}
