use ozlab_core::decomposition::{
    build_saw_tables, classify, decompose, find_break_points, BreakSpec, PathClass, DEFAULT_DELTA, DEFAULT_K,
};
use ozlab_core::renewal::renewal_identity;
use ozlab_core::saw::{walks_to, Census, SawEnsemble};
use ozlab_core::{Budget, Path, Point};
use proptest::prelude::*;

/// Distance from `y` to the planar sector of half-angle `acos(1 - delta)`
/// around `x`, measured in `s |.|`.
fn sector_distance(y: [f64; 2], x: [f64; 2], s: f64, delta: f64) -> f64 {
    let r = y[0].hypot(y[1]);
    if r == 0.0 {
        return 0.0;
    }
    let half = (1.0 - delta).acos();
    let mut angle = (y[1].atan2(y[0]) - x[1].atan2(x[0])).abs();
    if angle > std::f64::consts::PI {
        angle = std::f64::consts::TAU - angle;
    }
    let d = if angle <= half {
        0.0
    } else if angle <= half + std::f64::consts::FRAC_PI_2 {
        r * (angle - half).sin()
    } else {
        r
    };
    s * d
}

/// Quadratic-time break points straight from the definition.
fn naive_break_points(path: &Path, x: [f64; 2], s: f64, delta: f64, k: f64) -> Vec<usize> {
    let n = (x[0] * x[0] + x[1] * x[1]).sqrt();
    let x = [x[0] / n, x[1] / n];
    let c: Vec<[f64; 2]> = path.sites().iter().map(|p| [p.0[0] as f64, p.0[1] as f64]).collect();
    let proj = |p: [f64; 2]| p[0] * x[0] + p[1] * x[1];
    let m = c.len() - 1;
    (1..m)
        .filter(|&l| {
            let pl = proj(c[l]);
            (0..l).all(|j| proj(c[j]) < pl - 1e-9)
                && (l + 1..=m).all(|i| proj(c[i]) > pl + 1e-9)
                && (l + 1..=m).all(|i| {
                    let y = [c[i][0] - c[l][0], c[i][1] - c[l][1]];
                    sector_distance(y, x, s, delta) <= 2.0 * k * (1.0 + 1e-12) + 1e-12
                })
        })
        .collect()
}

fn all_walks(len: usize) -> Vec<Path> {
    let ens = SawEnsemble::new(2, -1.0, len).unwrap();
    let census = Census::run(&ens, &Budget::default(), false).unwrap();
    census.endpoints().iter().flat_map(|y| walks_to(y, &ens, &Budget::default()).unwrap()).collect()
}

#[test]
fn break_points_match_naive_definition() {
    let walks = all_walks(8);
    for (x, s) in [([1.0, 0.0], 0.6), ([1.0, 1.0], 0.9), ([3.0, 1.0], 0.3), ([2.0, 5.0], 1.4)] {
        let spec = BreakSpec::euclidean(&x, s, DEFAULT_DELTA, DEFAULT_K).unwrap();
        for w in &walks {
            assert_eq!(find_break_points(w, &spec, None), naive_break_points(w, x, s, DEFAULT_DELTA, DEFAULT_K), "{w:?}");
        }
    }
}

#[test]
fn decomposition_is_a_bijection_at_cutoff_eight() {
    let ens = SawEnsemble::new(2, -1.2, 8).unwrap();
    let spec = BreakSpec::euclidean(&[1.0, 0.0], 0.6, DEFAULT_DELTA, DEFAULT_K).unwrap();
    let t = build_saw_tables(&ens, &spec, &Budget::default(), true).unwrap();
    assert_eq!(t.reconstruction_failures, 0);
    assert_eq!(t.class_failures, 0, "{:?}", t.first_failure);
    assert!(t.partition_error() < 1e-14);
    let rep = renewal_identity(&t);
    assert!(rep.decomposable_paths_weight > 0.0);
    assert!(rep.max_log_error < 1e-12, "{}", rep.max_log_error);
    assert!(rep.max_log_error_all < 1e-12, "{}", rep.max_log_error_all);
}

#[test]
fn pieces_of_decomposable_walks_land_in_their_classes() {
    let spec = BreakSpec::euclidean(&[1.0, 0.0], 0.6, DEFAULT_DELTA, DEFAULT_K).unwrap();
    let mut seen = 0;
    for w in all_walks(8) {
        let dec = decompose(&w, &spec);
        assert_eq!(dec.reconstruct(), w);
        if dec.degenerate {
            continue;
        }
        seen += 1;
        assert!(classify(&dec.lambda_l, &spec).in_left());
        assert!(classify(&dec.lambda_r, &spec).in_right());
        for p in &dec.middles {
            assert_eq!(classify(p, &spec), PathClass::Zero);
        }
    }
    assert!(seen > 0);
}

fn random_walk(steps: Vec<(usize, bool)>) -> Path {
    let mut sites = vec![Point(vec![0, 0])];
    for (axis, up) in steps {
        let mut next = sites.last().unwrap().clone();
        next.0[axis] += if up { 1 } else { -1 };
        sites.push(next);
    }
    Path::new(sites).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_paths_agree_with_naive_break_points(
        steps in prop::collection::vec((0usize..2, prop::bool::weighted(0.7)), 1..30),
        angle in -0.7f64..0.7,
        s in 0.2f64..2.0,
    ) {
        let x = [angle.cos(), angle.sin()];
        let path = random_walk(steps);
        let spec = BreakSpec::euclidean(&x, s, DEFAULT_DELTA, DEFAULT_K).unwrap();
        prop_assert_eq!(find_break_points(&path, &spec, None), naive_break_points(&path, x, s, DEFAULT_DELTA, DEFAULT_K));
        prop_assert_eq!(decompose(&path, &spec).reconstruct(), path);
    }
}
