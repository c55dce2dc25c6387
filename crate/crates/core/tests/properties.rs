use proptest::prelude::*;

use demand_ident::demand::{demand, demand_curve, purchase_decision, quality_demand_surface};
use demand_ident::distributions::{binomial, Marginal};
use demand_ident::grid;
use demand_ident::identification::{isotonic, solve_cross_moments};
use demand_ident::inequality::{check_delta_bounds, classify, Family, Regime};
use demand_ident::moments::MomentTable;
use demand_ident::population::{make_high_population, make_low_population, Population, RatioMarginalSpec};

fn beta_pair() -> impl Strategy<Value = Population> {
    (1.5f64..4.0, 1.5f64..4.0, 1.5f64..4.0, 1.5f64..4.0).prop_map(|(a, b, c, d)| {
        Population::value_product(
            Marginal::ScaledBeta { alpha: a, beta: b, lo: 0.5, hi: 2.0 },
            Marginal::ScaledBeta { alpha: c, beta: d, lo: 0.5, hi: 1.5 },
        )
        .unwrap()
    })
}

fn ratio_spec() -> impl Strategy<Value = RatioMarginalSpec> {
    (0.2f64..3.0, 0.2f64..2.0).prop_map(|(lo, w)| RatioMarginalSpec::uniform(lo, lo + w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn surface_monotone_in_quality_and_price(pop in beta_pair()) {
        let q = grid::uniform(-2.0, 2.0, 17);
        let p = grid::chebyshev(0.5, 1.5, 5);
        let s = quality_demand_surface(&pop, &q, &p).unwrap();
        for j in 0..p.len() {
            for i in 1..q.len() {
                prop_assert!(s.get(i, j) >= s.get(i - 1, j) - 1e-9);
            }
        }
        for i in 0..q.len() {
            for j in 1..p.len() {
                prop_assert!(s.get(i, j) <= s.get(i, j - 1) + 1e-9);
            }
            for j in 0..p.len() {
                prop_assert!((0.0..=1.0).contains(&s.get(i, j)));
            }
        }
    }

    #[test]
    fn exact_slice_moments_recover_table(
        prices in proptest::collection::vec(0.3f64..2.0, 5..10),
        mk in 0.5f64..2.0,
        mm in 0.5f64..1.5,
    ) {
        prop_assume!({
            let mut s = prices.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[1] - w[0] > 0.05)
        });
        // two-point mixture table: entries are closed-form
        let pts = [(mk, mm, 0.4), (mk * 1.3, mm * 0.8, 0.6)];
        let n_max = 3;
        let mut truth = MomentTable::new(n_max);
        for n in 1..=n_max {
            for k in 0..=n {
                let v = pts.iter().map(|(a, b, w)| w * a.powi((n - k) as i32) * b.powi(k as i32)).sum();
                truth.set(n - k, k, v, 0.0);
            }
        }
        let moments: Vec<Vec<f64>> = prices
            .iter()
            .map(|&p| {
                (1..=n_max)
                    .map(|n| (0..=n).map(|k| binomial(n, k) * (-p).powi(k as i32) * truth.get(n - k, k)).sum())
                    .collect()
            })
            .collect();
        let table = solve_cross_moments(&prices, &moments, n_max).unwrap();
        let (err, _) = table.max_relative_error(&truth);
        prop_assert!(err < 1e-9, "err {err:e}");
    }

    #[test]
    fn isotonic_is_monotone_and_preserves_sum(v in proptest::collection::vec(-1.0f64..1.0, 1..60)) {
        let fit = isotonic(&v);
        prop_assert_eq!(fit.len(), v.len());
        prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        let (a, b): (f64, f64) = (v.iter().sum(), fit.iter().sum());
        prop_assert!((a - b).abs() < 1e-12);
        let again = isotonic(&fit);
        for (x, y) in again.iter().zip(&fit) {
            prop_assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn counterexample_demands_coincide_and_regimes_split(ratio in ratio_spec(), fl in 0.01f64..1.0, fh in 0.01f64..0.99) {
        let low_d = check_delta_bounds(&ratio, 1.0, Family::Low).bound * fl;
        let high_d = check_delta_bounds(&ratio, 1.0, Family::High).bound * fh;
        let low = make_low_population(ratio.clone(), low_d).unwrap();
        let high = make_high_population(ratio.clone(), high_d).unwrap();
        let prices = grid::chebyshev(ratio.r_lo().max(0.05) * 0.9, ratio.r_hi() * 1.1, 33);
        let a = demand_curve(&low, &prices).unwrap();
        let b = demand_curve(&high, &prices).unwrap();
        prop_assert!(a.max_gap(&b) <= 1e-12);
        prop_assert!(a.values.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(classify(&low).unwrap().regime, Regime::Low);
        prop_assert_eq!(classify(&high).unwrap().regime, Regime::High);
    }

    #[test]
    fn demand_is_complement_of_ratio_cdf(pop in beta_pair(), p in 0.2f64..5.0) {
        let g = pop.ratio_marginal().unwrap().cdf(p);
        prop_assert!((demand(&pop, p).unwrap() - (1.0 - g)).abs() <= 1e-10);
    }

    #[test]
    fn classify_invariant_to_good_value_rescaling(delta in 0.05f64..1.0, c in 0.3f64..4.0) {
        let pop = make_low_population(RatioMarginalSpec::uniform(1.0, 2.0).unwrap(), delta).unwrap();
        let scaled = pop.scale_good_value(c).unwrap();
        let (a, b) = (classify(&pop).unwrap(), classify(&scaled).unwrap());
        prop_assert_eq!(a.regime, b.regime);
        prop_assert!((a.mean_vm - b.mean_vm).abs() <= 1e-6 * a.mean_vm);
        prop_assert!((a.boundary_mean_vm - b.boundary_mean_vm).abs() <= 1e-6 * a.boundary_mean_vm);
    }

    #[test]
    fn purchase_rule_nests(vk in 0.0f64..3.0, vm in 0.1f64..3.0, q in -2.0f64..2.0, p in 0.01f64..4.0, dq in 0.0f64..1.0) {
        if purchase_decision(vk, vm, q, p) {
            prop_assert!(purchase_decision(vk, vm, q + dq, p));
            prop_assert!(purchase_decision(vk, vm, q, p * 0.9));
        }
    }

    #[test]
    fn sampled_money_values_positive(delta in 0.01f64..0.058, seed in 0u64..1000) {
        let pop = make_high_population(RatioMarginalSpec::uniform(1.0, 2.0).unwrap(), delta).unwrap();
        let draws = pop.sample(2000, seed).unwrap();
        prop_assert!(draws.iter().all(|&(vk, vm)| vm > 0.0 && vk >= 0.0));
    }

    #[test]
    fn moment_table_json_round_trip(vals in proptest::collection::vec(-10.0f64..10.0, 14)) {
        let mut t = MomentTable::new(4);
        let keys: Vec<(usize, usize)> = t.iter().skip(1).map(|(j, k, _, _)| (j, k)).collect();
        for ((j, k), v) in keys.into_iter().zip(vals) {
            t.set(j, k, v, v.abs() * 1e-3);
        }
        let back: MomentTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }
}
