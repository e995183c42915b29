use proptest::prelude::*;
use semiflow::accept::random_scenario;
use semiflow::flow::Flow;
use semiflow::markov::analytic_kernel;
use semiflow::metrics::{kolmogorov, l1_cdf, Cdf, CdfCurve};
use semiflow::rng::stream;
use semiflow::scenario::library;

fn samples() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn flow_is_a_semigroup(seed in 0u64..10_000, x0 in -4.0..4.0f64, s in 0.0..3.0f64, t in 0.0..3.0f64) {
        let spec = random_scenario(&mut stream(seed, 0));
        let flow = Flow::new(&spec);
        let direct = flow.flow(x0, s + t).unwrap().position;
        let mid = flow.flow(x0, s).unwrap().position;
        let composed = flow.flow(mid, t).unwrap().position;
        prop_assert!((direct - composed).abs() <= 1e-9 * (1.0 + direct.abs()), "{direct} vs {composed}");
    }

    #[test]
    fn flow_preserves_order(seed in 0u64..10_000, x in -4.0..4.0f64, gap in 0.0..2.0f64, t in 0.0..5.0f64) {
        let spec = random_scenario(&mut stream(seed, 1));
        let flow = Flow::new(&spec);
        let lo = flow.flow(x, t).unwrap().position;
        let hi = flow.flow(x + gap, t).unwrap().position;
        prop_assert!(lo <= hi + 1e-12);
    }

    #[test]
    fn cantor_measure_is_additive(a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64) {
        let spec = library::cantor_gap();
        let mut p = [a, b, c];
        p.sort_by(f64::total_cmp);
        let whole = spec.measure_mass(p[0], p[2]).unwrap();
        let parts = spec.measure_mass(p[0], p[1]).unwrap() + spec.measure_mass(p[1], p[2]).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&whole));
    }

    #[test]
    fn kolmogorov_is_a_bounded_metric(x in samples(), y in samples(), z in samples()) {
        let (fx, fy, fz) = (CdfCurve::empirical(&x), CdfCurve::empirical(&y), CdfCurve::empirical(&z));
        let dxy = kolmogorov(&fx, &fy);
        prop_assert!((0.0..=1.0).contains(&dxy));
        prop_assert_eq!(dxy, kolmogorov(&fy, &fx));
        prop_assert_eq!(kolmogorov(&fx, &fx), 0.0);
        prop_assert!(kolmogorov(&fx, &fz) <= dxy + kolmogorov(&fy, &fz) + 1e-12);
    }

    #[test]
    fn l1_is_a_bounded_metric(x in samples(), y in samples(), z in samples(), lo in -5.0..0.0f64, w in 0.1..8.0f64) {
        let win = (lo, lo + w);
        let (fx, fy, fz) = (CdfCurve::empirical(&x), CdfCurve::empirical(&y), CdfCurve::empirical(&z));
        let dxy = l1_cdf(&fx, &fy, win);
        prop_assert!(dxy >= 0.0 && dxy <= w + 1e-12);
        prop_assert!((dxy - l1_cdf(&fy, &fx, win)).abs() <= 1e-12);
        prop_assert!(l1_cdf(&fx, &fz, win) <= dxy + l1_cdf(&fy, &fz, win) + 1e-12);
    }

    #[test]
    fn wait_kernel_is_a_distribution(x0 in -2.0..0.5f64, t in 0.0..4.0f64, lambda in 0.2..3.0f64) {
        let spec = library::poisson_wait(lambda, 1.0);
        let k = analytic_kernel(&spec, x0, t).unwrap();
        prop_assert!((k.total_mass() - 1.0).abs() <= 1e-9);
        let grid: Vec<f64> = (0..=60).map(|i| -3.0 + 0.1 * i as f64).collect();
        let mut prev = 0.0;
        for &g in &grid {
            let v = k.eval(g);
            prop_assert!(v >= prev - 1e-12 && v <= 1.0 + 1e-12);
            prev = v;
        }
    }
}
