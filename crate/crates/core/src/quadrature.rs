//! Adaptive Gauss–Legendre integration on bounded intervals.
//!
//! Each panel is evaluated with a 15-point rule and compared against the sum of
//! its two halves. The panel with the largest disagreement is bisected until
//! the summed disagreement meets the absolute tolerance; no panel is split
//! more than [`MAX_LEVELS`] times. Two-dimensional integrals are computed by
//! nesting the one-dimensional routine.

use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Default absolute tolerance.
pub const ABS_TOL: f64 = 1e-8;
/// Maximum number of bisection levels below the initial panel.
pub const MAX_LEVELS: u32 = 20;

const RULE_POINTS: usize = 15;

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(RULE_POINTS))
}

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1], by Newton
/// iteration on the Legendre recurrence.
fn legendre_rule(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

/// Single fixed-order Gauss–Legendre panel on [a, b].
pub fn fixed<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let r = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    r.nodes
        .iter()
        .zip(&r.weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Integrates `f` over [a, b] to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, tol).map(|v| -v);
    }
    let whole = fixed(&f, a, b);
    let first = Panel::new(&f, a, b, whole, 0);
    if !first.value.is_finite() {
        return Err(Error::QuadratureFailure { a, b, tol, levels: 0 });
    }
    let mut total_err = first.err;
    let mut open = BinaryHeap::from([first]);
    let mut closed: Vec<Panel> = Vec::new();
    for _ in 0..MAX_SPLITS {
        if total_err <= tol {
            break;
        }
        let Some(worst) = open.pop() else { break };
        if worst.err == 0.0 {
            open.push(worst);
            break;
        }
        if worst.level >= MAX_LEVELS {
            closed.push(worst);
            continue;
        }
        let m = 0.5 * (worst.a + worst.b);
        let left = Panel::new(&f, worst.a, m, worst.left, worst.level + 1);
        let right = Panel::new(&f, m, worst.b, worst.right, worst.level + 1);
        if !(left.value.is_finite() && right.value.is_finite()) {
            return Err(Error::QuadratureFailure { a: worst.a, b: worst.b, tol, levels: worst.level + 1 });
        }
        total_err += left.err + right.err - worst.err;
        open.push(left);
        open.push(right);
    }
    let panels = || open.iter().chain(&closed);
    let total_err: f64 = panels().map(|p| p.err).sum();
    if total_err > tol {
        let worst = panels().max_by(|x, y| x.err.total_cmp(&y.err)).expect("at least one panel");
        return Err(Error::QuadratureFailure { a: worst.a, b: worst.b, tol, levels: worst.level });
    }
    Ok(panels().map(|p| p.value).sum())
}

/// Upper bound on bisections per integral.
const MAX_SPLITS: usize = 1 << 16;

/// A panel with its halves evaluated; `err` compares the whole-panel rule
/// against the sum of halves, ignoring differences at rounding level.
struct Panel {
    a: f64,
    b: f64,
    left: f64,
    right: f64,
    value: f64,
    err: f64,
    level: u32,
}

impl Panel {
    fn new<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, level: u32) -> Self {
        let m = 0.5 * (a + b);
        let (left, right) = (fixed(f, a, m), fixed(f, m, b));
        let value = left + right;
        let diff = (value - whole).abs();
        let err = if diff <= 64.0 * f64::EPSILON * value.abs() { 0.0 } else { diff };
        Self { a, b, left, right, value, err, level }
    }
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err).is_eq()
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Integrates over [a, b] splitting at the supplied interior breakpoints
/// (kinks or jumps of the integrand). Breakpoints outside (a, b) are ignored.
/// The tolerance is shared between pieces in proportion to their width.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > a && *x < b)
        .collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * (b - a));
    let width = b - a;
    let mut total = 0.0;
    for w in pts.windows(2) {
        let share = tol * (w[1] - w[0]) / width;
        total += integrate(&f, w[0], w[1], share.max(f64::MIN_POSITIVE))?;
    }
    Ok(total)
}

/// Nested double integral: outer variable over [a, b], inner variable over the
/// interval returned by `inner_limits` for each outer value.
pub fn integrate_2d<F, L>(f: F, a: f64, b: f64, inner_limits: L, tol: f64) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
    L: Fn(f64) -> (f64, f64),
{
    let inner_tol = tol / (b - a).abs().max(1.0);
    let failure = std::cell::Cell::new(None);
    let outer = |x: f64| {
        let (lo, hi) = inner_limits(x);
        match integrate(|y| f(x, y), lo, hi, inner_tol) {
            Ok(v) => v,
            Err(e) => {
                failure.set(Some(e));
                f64::NAN
            }
        }
    };
    let result = integrate(outer, a, b, tol);
    if let Some(e) = failure.take() {
        return Err(e);
    }
    result
}
