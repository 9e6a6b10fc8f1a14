use ozlab_core::renewal::{
    curvature_report, renewal_sum, sharp_triangle_check, solve_boundary, GeneratingFunction, SyntheticStepModel,
};
use ozlab_core::Point;
use proptest::prelude::*;

/// `log (C(2n, n + k) / 4^n)`: the lazy step is half the sum of two fair signs.
fn log_lazy_transverse(n: u64, k: i64) -> f64 {
    let j = (n as i64 + k) as u64;
    if k.unsigned_abs() > n {
        return f64::NEG_INFINITY;
    }
    let lf = |m: u64| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    lf(2 * n) - lf(j) - lf(2 * n - j) - n as f64 * 4f64.ln()
}

#[test]
fn lazy_walk_renewal_matches_binomial_oracle() {
    let m = 0.4;
    let model = SyntheticStepModel::lazy_walk(m).unwrap();
    for (n, k) in [(1, 0), (5, 2), (40, -3), (300, 11), (300, 0)] {
        let r = model.exact_g(&Point(vec![n as i32, k as i32])).unwrap();
        let exact = log_lazy_transverse(n, k) - m * n as f64;
        assert!((r.log_value - exact).abs() < 1e-11, "({n},{k}): {} vs {exact}", r.log_value);
    }
}

#[test]
fn lazy_walk_local_clt_at_two_thousand_steps() {
    let m = 0.3;
    let n = 2000.0;
    let r = SyntheticStepModel::lazy_walk(m).unwrap().exact_g(&Point(vec![2000, 0])).unwrap();
    let scaled = (r.log_value + m * n).exp() * (std::f64::consts::PI * n).sqrt();
    assert!((scaled - 1.0).abs() < 0.01, "{scaled}");
}

#[test]
fn lazy_walk_boundary_curvature_is_one_half() {
    for m in [0.1, 0.7, 2.0] {
        let model = SyntheticStepModel::lazy_walk(m).unwrap();
        let gf = GeneratingFunction::new(&model.w0()).unwrap();
        let chart = solve_boundary(&gf, &[1.0, 0.0]).unwrap();
        assert!((chart.t_hat[0] - m).abs() < 1e-10 && chart.t_hat[1].abs() < 1e-10);
        let c = curvature_report(&chart).unwrap();
        assert!((c.kappas[0] - 0.5).abs() < 1e-6, "{:?}", c.kappas);
    }
}

#[test]
fn euclidean_triangle_inequality_is_sharp() {
    let xi = |v: &[f64; 2]| v[0].hypot(v[1]);
    let ok = sharp_triangle_check(&xi, 1.0, 10_000, 10.0, 4);
    assert_eq!(ok.violations, 0);
    let over = sharp_triangle_check(&xi, 1.05, 10_000, 10.0, 4);
    assert!(over.violations > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truncated_series_equals_full_sum(n in 1i32..25, k in -6i32..=6, m in 0.05f64..1.5) {
        let model = SyntheticStepModel::lazy_walk(m).unwrap();
        let target = Point(vec![n, k]);
        let full = model.exact_g(&target).unwrap();
        // every step advances one layer, so at most n - 1 middle pieces
        let trunc = renewal_sum(&model.tables(), &target, Some(n as usize), Some(&model.t_hat())).unwrap();
        prop_assert!(full.value == trunc.value || (full.log_value - trunc.log_value).abs() < 1e-12);
    }

    #[test]
    fn boundary_point_is_dual_to_its_normal(angle in -0.6f64..0.6, m in 0.2f64..1.5) {
        let model = SyntheticStepModel::lazy_walk(m).unwrap();
        let gf = GeneratingFunction::new(&model.w0()).unwrap();
        let x = [angle.cos(), angle.sin()];
        let chart = solve_boundary(&gf, &x).unwrap();
        prop_assert!(chart.residual.abs() < 1e-10);
        prop_assert!(chart.transverse_gradient < 1e-8);
        prop_assert!(chart.kappas[0] > 0.0);
    }
}
