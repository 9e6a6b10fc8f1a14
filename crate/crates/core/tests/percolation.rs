use ozlab_core::percolation::{monotonicity_violations, simulate_connectivity, PercolationConfig};
use ozlab_core::Point;

#[test]
fn one_dimensional_connectivity_is_p_to_the_distance() {
    let cfg = PercolationConfig::new(1, 1.0, 4, 11).unwrap();
    let est = simulate_connectivity(&Point(vec![3]), &cfg, 20_000).unwrap();
    let exact = cfg.p().powi(3);
    assert!(est.ci_lo <= exact && exact <= est.ci_hi, "{exact} outside [{}, {}]", est.ci_lo, est.ci_hi);
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let cfg = PercolationConfig::new(2, 0.4, 6, 5).unwrap();
    let x = Point(vec![2, 1]);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_connectivity(&x, &cfg, 3000).unwrap())
    };
    assert_eq!(run(1), run(3));
    assert_eq!(run(1), simulate_connectivity(&x, &cfg, 3000).unwrap());
}

#[test]
fn coupled_configurations_are_monotone_in_beta() {
    let cfg = PercolationConfig::new(2, 0.5, 5, 3).unwrap();
    let v = monotonicity_violations(&Point(vec![3, 0]), &cfg, &[0.2, 0.4, 0.6, 0.9, 1.5], 2000).unwrap();
    assert_eq!(v, 0);
}

#[test]
fn targets_outside_the_box_are_refused() {
    let cfg = PercolationConfig::new(2, 0.5, 2, 3).unwrap();
    let err = simulate_connectivity(&Point(vec![5, 0]), &cfg, 10).unwrap_err();
    assert!(err.is_refusal());
}
