//! Evaluation grids.

use std::f64::consts::PI;

/// `n` Chebyshev–Lobatto points (extrema of T_{n-1}) on [lo, hi], ascending,
/// endpoints included. A single point sits at the midpoint.
pub fn chebyshev(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            let m = (n - 1) as f64;
            let mut pts: Vec<f64> = (0..n)
                .map(|i| mid - half * (PI * i as f64 / m).cos())
                .collect();
            pts[0] = lo;
            pts[n - 1] = hi;
            if n % 2 == 1 {
                pts[n / 2] = mid;
            }
            pts
        }
    }
}

/// `n` equally spaced points on [lo, hi], endpoints included.
pub fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { hi } else { lo + step * i as f64 }).collect()
        }
    }
}
