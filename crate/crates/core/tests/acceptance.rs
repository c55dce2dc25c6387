//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::time::{Duration, Instant};

use demand_ident::demand::{self, demand_curve, empirical_demand, invert_demand};
use demand_ident::distributions::{binomial, Marginal};
use demand_ident::grid;
use demand_ident::identification::{verify_recovery, IdentificationConfig};
use demand_ident::inequality::{build_nonid_demo, check_delta_bounds, Family, Regime};
use demand_ident::moments::MomentTable;
use demand_ident::population::{make_high_population, make_low_population, Population, RatioMarginalSpec};
use demand_ident::quadrature;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit() -> RatioMarginalSpec {
    RatioMarginalSpec::uniform(1.0, 2.0).unwrap()
}

fn beta_product() -> Population {
    Population::value_product(
        Marginal::ScaledBeta { alpha: 2.0, beta: 3.0, lo: 0.5, hi: 2.0 },
        Marginal::ScaledBeta { alpha: 3.0, beta: 2.0, lo: 0.5, hi: 1.5 },
    )
    .unwrap()
}

/// E[(lo + (hi − lo) B)^n] with B ~ Beta(α, β), from E[B^i] = Π_{t<i} (α+t)/(α+β+t).
fn scaled_beta_moment(alpha: f64, beta: f64, lo: f64, hi: f64, n: usize) -> f64 {
    (0..=n)
        .map(|i| {
            let eb: f64 = (0..i).map(|t| (alpha + t as f64) / (alpha + beta + t as f64)).product();
            binomial(n, i) * lo.powi((n - i) as i32) * (hi - lo).powi(i as i32) * eb
        })
        .sum()
}

fn beta_product_oracle(max_order: usize) -> MomentTable {
    let mut t = MomentTable::new(max_order);
    for n in 1..=max_order {
        for k in 0..=n {
            let j = n - k;
            let v = scaled_beta_moment(2.0, 3.0, 0.5, 2.0, j) * scaled_beta_moment(3.0, 2.0, 0.5, 1.5, k);
            t.set(j, k, v, 0.0);
        }
    }
    t
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let grid = grid::chebyshev(0.999, 2.002, 257);
    let demo = build_nonid_demo(&unit(), 0.5, 0.04, &grid, 1e-10).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (low, high) = demo.reports;
    let high_mean = 2.0 * (1.04f64.sqrt() - 0.2);
    ensure(demo.shared_curve.prices.len() == 257, || "grid size".into())?;
    ensure(demo.curve_gap <= 1e-10, || format!("curve gap {:e}", demo.curve_gap))?;
    ensure(low.regime == Regime::Low && high.regime == Regime::High, || {
        format!("regimes {:?}/{:?}", low.regime, high.regime)
    })?;
    let checks = [
        ("low mean", low.mean_vm, 1.0),
        ("low boundary", low.boundary_mean_vm, 0.5),
        ("high mean", high.mean_vm, high_mean),
        ("high boundary", high.boundary_mean_vm, 5.0),
        ("high threshold", high.threshold, 3.27921),
    ];
    for (name, got, want) in checks {
        let tol = if name == "high threshold" { 1e-5 } else { 1e-6 };
        ensure((got - want).abs() <= tol, || format!("{name}: {got} vs {want}"))?;
    }
    ensure(elapsed <= Duration::from_secs(5), || format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "gap {:e}, Low {:.6} <= {:.6}, High {:.6} > {:.6}, {:.2?}",
        demo.curve_gap, low.boundary_mean_vm, low.threshold, high.boundary_mean_vm, high.threshold, elapsed
    ))
}

fn criterion_2() -> Outcome {
    let ratio = unit();
    let low = check_delta_bounds(&ratio, 0.5, Family::Low);
    let high = check_delta_bounds(&ratio, 0.04, Family::High);
    // oracles: 2 g(r_lo) ∫ (r − r_lo) dr by quadrature; positive root of
    // δ² + δ − 1/16 by bisection
    let low_oracle = 2.0 * ratio.pdf(1.0) * quadrature::integrate(|r| r - 1.0, 1.0, 2.0, 1e-14).unwrap();
    let (mut a, mut b) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m * m + m - 1.0 / 16.0 > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    let high_oracle = 0.5 * (a + b);
    ensure((low.bound - 1.0).abs() <= 1e-9 && (low.bound - low_oracle).abs() <= 1e-9, || {
        format!("low bound {}", low.bound)
    })?;
    ensure((high.bound - high_oracle).abs() <= 1e-9, || format!("high bound {} vs {high_oracle}", high.bound))?;
    ensure((high.bound - 0.059017).abs() <= 1e-6, || format!("high bound {}", high.bound))?;

    for (family, bound, inclusive) in [(Family::Low, low.bound, true), (Family::High, high.bound, false)] {
        let mut sweep: Vec<f64> = (0..98).map(|i| bound * (0.5 + i as f64 / 97.0)).collect();
        sweep.push(bound);
        sweep.push(f64::from_bits(bound.to_bits() + 1));
        let mut last_ok = None;
        let mut first_fail = None;
        sweep.sort_by(f64::total_cmp);
        for &d in &sweep {
            let ok = check_delta_bounds(&ratio, d, family).ok;
            let want = if inclusive { d <= bound } else { d < bound };
            ensure(ok == want, || format!("{family:?}: δ = {d} gave ok = {ok}"))?;
            if ok {
                last_ok = Some(d);
            } else if first_fail.is_none() {
                first_fail = Some(d);
            }
        }
        let (lo, hi) = (last_ok.unwrap(), first_fail.unwrap());
        let expected_lo = if inclusive { bound } else { sweep[sweep.iter().position(|&d| d == bound).unwrap() - 1] };
        let expected_hi = if inclusive { f64::from_bits(bound.to_bits() + 1) } else { bound };
        ensure(lo == expected_lo && hi == expected_hi, || format!("{family:?} transition [{lo}, {hi}]"))?;
    }
    Ok(format!("low bound {:.12}, high bound {:.12}, 100-point sweeps transition at the bound", low.bound, high.bound))
}

fn criterion_3() -> Outcome {
    let forms: Vec<(&str, Population)> = vec![
        ("ratio product", Population::ratio_product(unit(), Marginal::Uniform { lo: 1.0, hi: 3.0 }).unwrap()),
        ("ratio conditional", make_high_population(unit(), 0.04).unwrap()),
        ("value product", beta_product()),
        (
            "mixture",
            Population::mixture(vec![
                (0.3, Population::point_mass(1.5, 1.0).unwrap()),
                (0.7, make_low_population(unit(), 0.5).unwrap()),
            ])
            .unwrap(),
        ),
    ];
    let mut worst: f64 = 0.0;
    for (name, pop) in &forms {
        let prices = demand::default_price_grid(pop);
        let curve = demand_curve(pop, &prices).map_err(|e| format!("{name}: {e}"))?;
        let cdf = invert_demand(&curve).map_err(|e| format!("{name}: {e}"))?;
        let ratio = pop.ratio_marginal().map_err(|e| format!("{name}: {e}"))?;
        for (r, g) in cdf.r.iter().zip(&cdf.cdf) {
            let err = (g - ratio.cdf(*r)).abs();
            worst = worst.max(err);
            ensure(err <= 1e-12, || format!("{name}: G({r}) off by {err:e}"))?;
        }
    }
    Ok(format!("{} forms, max |ΔG| = {worst:e}", forms.len()))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let pop = beta_product();
    let config = IdentificationConfig::new(0.5, 1.5);
    let report = verify_recovery(&pop, &config).map_err(|e| e.to_string())?.report;
    let elapsed = start.elapsed();
    let oracle = beta_product_oracle(4);
    let (err, at) = report.recovered.max_relative_error(&oracle);
    let (internal, _) = report.reference.max_relative_error(&oracle);
    ensure(config.n_prices == 9 && config.max_order == 4 && report.quality_points == 4096, || "config".into())?;
    ensure(internal <= 1e-12, || format!("moments() disagrees with closed form by {internal:e}"))?;
    ensure(err <= 1e-3, || format!("max relative error {err:e} at {at:?}"))?;
    ensure(elapsed <= Duration::from_secs(60), || format!("runtime {elapsed:?}"))?;
    Ok(format!("max relative error {err:.3e} at {at:?}, {:.2?}", elapsed))
}

fn families() -> Vec<(&'static str, Population)> {
    vec![
        ("point mass", Population::point_mass(2.0, 3.0).unwrap()),
        ("ratio product", Population::ratio_product(unit(), Marginal::ScaledBeta { alpha: 2.0, beta: 2.0, lo: 0.5, hi: 1.5 }).unwrap()),
        ("value product", beta_product()),
        ("low family", make_low_population(unit(), 0.5).unwrap()),
        ("high family", make_high_population(unit(), 0.04).unwrap()),
        (
            "mixture",
            Population::mixture(vec![
                (0.4, make_low_population(unit(), 0.5).unwrap()),
                (0.6, beta_product()),
            ])
            .unwrap(),
        ),
    ]
}

fn criterion_5() -> Outcome {
    let n = 1_000_000;
    let mut checked = 0;
    let mut worst_sigma: f64 = 0.0;
    for (i, (name, pop)) in families().into_iter().enumerate() {
        let draws = pop.sample(n, 1000 + i as u64).map_err(|e| format!("{name}: {e}"))?;
        let s = pop.support();
        let prices = grid::uniform(s.r_lo * 0.9, s.r_hi * 1.1, 33);
        for &p in &prices {
            let exact = demand::demand(&pop, p).map_err(|e| format!("{name}: {e}"))?;
            let emp = empirical_demand(&draws, p).value;
            let band = 4.0 * (exact * (1.0 - exact) / n as f64).sqrt();
            let dev = (emp - exact).abs();
            ensure(dev <= band, || format!("{name}: demand at p = {p}: {emp} vs {exact} (band {band:e})"))?;
            if band > 0.0 {
                worst_sigma = worst_sigma.max(4.0 * dev / band);
            }
            checked += 1;
        }
        let quad = pop.moments(4).map_err(|e| format!("{name}: {e}"))?;
        let mc = demand_ident::population::empirical_moments(&draws, 4);
        for (j, k, v, se) in mc.iter().skip(1) {
            let exact = quad.get(j, k);
            // summation rounding floor for degenerate (zero-variance) draws
            let band = 4.0 * se + 1e-12 * exact.abs() + quad.diagnostic(j, k);
            let dev = (v - exact).abs();
            ensure(dev <= band, || format!("{name}: moment ({j},{k}): {v} vs {exact} (4σ = {:e})", 4.0 * se))?;
            if se > 0.0 {
                worst_sigma = worst_sigma.max(dev / se);
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} demand/moment checks across 6 families, worst deviation {worst_sigma:.2}σ"))
}

fn criterion_6() -> Outcome {
    let n = 1_000_000;
    let bins = 16;
    let mut worst: f64 = 0.0;
    for (i, (name, pop)) in [("low", make_low_population(unit(), 0.5).unwrap()), ("high", make_high_population(unit(), 0.04).unwrap())]
        .into_iter()
        .enumerate()
    {
        let Population::RatioConditional { ratio, cond } = &pop else { unreachable!() };
        let draws = pop.sample(n, 77 + i as u64).map_err(|e| e.to_string())?;
        let (mut s1, mut s2, mut cnt) = (vec![0.0; bins], vec![0.0; bins], vec![0usize; bins]);
        for &(vk, vm) in &draws {
            let b = (((vk / vm) - 1.0) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
            s1[b] += vm;
            s2[b] += vm * vm;
            cnt[b] += 1;
        }
        for b in 0..bins {
            let (a, c) = (1.0 + b as f64 / bins as f64, 1.0 + (b + 1) as f64 / bins as f64);
            let num = quadrature::integrate(|r| cond.h.eval(r, 1.0), a, c, 1e-13).unwrap();
            let den = quadrature::integrate(|r| ratio.pdf(r), a, c, 1e-13).unwrap();
            let want = num / den;
            let m = cnt[b] as f64;
            let mean = s1[b] / m;
            let se = ((s2[b] / m - mean * mean) / (m - 1.0)).sqrt();
            let dev = (mean - want).abs();
            ensure(dev <= 4.0 * se, || format!("{name} bin {b}: {mean} vs {want} (σ = {se:e})"))?;
            worst = worst.max(dev / se);
        }
    }
    Ok(format!("32 bins, worst deviation {worst:.2}σ"))
}

fn criterion_7() -> Outcome {
    let pop = beta_product();
    let base = IdentificationConfig { quality_pad: Some(1.0), ..IdentificationConfig::new(0.5, 1.5) };
    let shifted = IdentificationConfig { quality_shift: 0.7, ..base.clone() };
    let a = verify_recovery(&pop, &base).map_err(|e| e.to_string())?.report;
    let b = verify_recovery(&pop, &shifted).map_err(|e| e.to_string())?.report;
    let (diff, at) = b.recovered.max_relative_error(&a.recovered);
    ensure(diff <= 1e-9, || format!("recovered moments move by {diff:e} at {at:?}"))?;
    Ok(format!("max relative change {diff:e}"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 non-identification demo", criterion_1),
        ("2 delta bounds", criterion_2),
        ("3 demand inversion round trip", criterion_3),
        ("4 moment recovery", criterion_4),
        ("5 Monte Carlo cross-validation", criterion_5),
        ("6 conditional mean identity", criterion_6),
        ("7 quality-shift invariance", criterion_7),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
