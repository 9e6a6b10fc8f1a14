use ozlab_core::decomposition::{self_consistent_saw, DEFAULT_DELTA, DEFAULT_K};
use ozlab_core::fluct::{bridge_sampler, passage_probability, BridgeDp};
use ozlab_core::io::Q0File;
use ozlab_core::renewal::GeneratingFunction;
use ozlab_core::saw::SawEnsemble;
use ozlab_core::spectral::{momentum_grid, pole_solve, ruelle_leading_eigenvalue, ruelle_root, TruncatedRuelleOperator};
use ozlab_core::{Budget, Point};

fn log_lazy_transverse(n: u64, k: i64) -> f64 {
    let j = (n as i64 + k) as u64;
    let lf = |m: u64| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    lf(2 * n) - lf(j) - lf(2 * n - j) - n as f64 * 4f64.ln()
}

fn lazy_dp(n: usize) -> BridgeDp {
    let q0 = Q0File::lazy_walk(0.5).q0_table().unwrap();
    BridgeDp::new(&q0, 0, n, &Budget::default()).unwrap()
}

#[test]
fn passage_probabilities_match_binomial_oracle() {
    let n = 60;
    let dp = lazy_dp(n);
    for (x, a) in [(1, 0), (10, 3), (30, 0), (30, -7), (59, 1)] {
        let r = passage_probability(&dp, &Point(vec![x, a]));
        let exact = (log_lazy_transverse(x as u64, a as i64) + log_lazy_transverse((n as i32 - x) as u64, -a as i64)
            - log_lazy_transverse(n as u64, 0))
        .exp();
        assert!((r.probability - exact).abs() < 1e-12 * exact.max(1.0), "({x},{a}): {} vs {exact}", r.probability);
    }
}

#[test]
fn bridges_end_on_target_and_repeat_with_the_seed() {
    let dp = lazy_dp(16);
    let a = bridge_sampler(&dp, 10, 4, 7);
    let b = bridge_sampler(&dp, 10, 4, 7);
    assert_eq!(a.endpoint_failures, 0);
    assert_eq!(a.samples, b.samples);
    for s in &a.samples {
        assert_eq!(s[0][0], 0.0);
        assert_eq!(s[4][0], 0.0);
    }
    assert_ne!(a.samples, bridge_sampler(&dp, 10, 4, 8).samples);
}

#[test]
fn lazy_pole_follows_the_closed_form() {
    let m = 0.6;
    let model = ozlab_core::renewal::SyntheticStepModel::lazy_walk(m).unwrap();
    let gf = GeneratingFunction::new(&model.w0()).unwrap();
    for p in momentum_grid(1, std::f64::consts::FRAC_PI_4, 8) {
        let r = pole_solve(&gf, &p).unwrap();
        let closed = m - ((1.0 + p[0].cos()) / 2.0).ln();
        assert!((r.omega - closed).abs() < 1e-10, "{p:?}");
        assert!(r.simple);
    }
}

#[test]
fn saw_product_operator_eigenvalue_is_the_scalar_sum() {
    let ens = SawEnsemble::new(2, -1.2, 8).unwrap();
    let (spec, tables, _) = self_consistent_saw(&ens, &[1.0, 0.0], DEFAULT_DELTA, DEFAULT_K, &Budget::default(), 50).unwrap();
    let w0 = tables.weight_tables().w_0;
    let t = spec.t_hat().to_vec();
    for m in 0..=2 {
        let op = TruncatedRuelleOperator::product(&w0, m).unwrap();
        for z in [t.clone(), vec![t[0] - 0.1, 0.05]] {
            let r = ruelle_leading_eigenvalue(&op, &z, 200);
            let s = r.scalar_sum.unwrap();
            assert!((r.eigenvalue - s).abs() < 1e-10 * s, "m={m}: {} vs {s}", r.eigenvalue);
        }
        let root = ruelle_root(&op, 200).unwrap();
        assert!((root.p1 - t[0]).abs() < 1e-9, "m={m}: {} vs {}", root.p1, t[0]);
    }
}
