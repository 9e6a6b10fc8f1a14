use ozlab_core::ising::lines::extract_all;
use ozlab_core::ising::{
    bk_check, correlation_ht, odd_odd_correlation, spin_oracle, verify_representation, EdgeSet, ZCalc,
};
use ozlab_core::{Budget, Point};
use proptest::prelude::*;

fn subsets(sites: &[Point], k: usize) -> Vec<Vec<Point>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, s) in sites.iter().enumerate() {
        for mut rest in subsets(&sites[i + 1..], k - 1) {
            rest.insert(0, s.clone());
            out.push(rest);
        }
    }
    out
}

#[test]
fn random_line_sum_equals_spin_correlation_on_small_boxes() {
    let budget = Budget::default();
    for (w, h) in [(2, 2), (2, 3), (3, 2)] {
        let set = EdgeSet::rect(w, h).unwrap();
        let sites = set.vertices().to_vec();
        for k in [2, 4] {
            for a in subsets(&sites, k) {
                let r = verify_representation(&a, &set, 0.45, &budget).unwrap();
                assert!(r.max_abs_error < 1e-12, "{w}x{h} {a:?}: {}", r.max_abs_error);
                assert!((r.sum_q - r.spin_value).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn one_dimensional_correlations_are_tanh_powers() {
    let beta: f64 = 0.7;
    let set = EdgeSet::chain(10).unwrap();
    for k in 1..=10 {
        let c = spin_oracle(&[Point(vec![0]), Point(vec![k])], &set, beta, &Budget::default()).unwrap();
        assert!((c - beta.tanh().powi(k)).abs() < 1e-12, "k={k}");
    }
}

#[test]
fn bk_inequality_on_two_by_three_box() {
    let set = EdgeSet::rect(2, 3).unwrap();
    let budget = Budget::default();
    let mut zc = ZCalc::new(&set, 0.4, budget);
    let sites = set.vertices().to_vec();
    let mut instances = 0;
    for a in subsets(&sites, 2) {
        let (_, groups) = extract_all(&set, &a, &budget).unwrap();
        for family in groups.keys() {
            for pair in subsets(&sites, 2) {
                let r = bk_check(&pair[0], &pair[1], family, &mut zc).unwrap();
                assert!(r.holds, "{pair:?} {family:?}: {} > {}", r.lhs, r.rhs);
                instances += 1;
            }
        }
    }
    assert!(instances > 100);
}

#[test]
fn griffiths_lower_bound_for_odd_sets() {
    let set = EdgeSet::rect(4, 3).unwrap();
    let a = [Point(vec![0, 0]), Point(vec![0, 1]), Point(vec![0, 2])];
    let b = [Point(vec![0, 1])];
    for x in 1..=3 {
        let r = odd_odd_correlation(&a, &b, &Point(vec![x, 0]), &set, 0.35, &Budget::default()).unwrap();
        assert!(r.lower_bound_holds && r.value >= r.lower_bound - r.tolerance_used);
        assert!((r.total_q - r.value).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn diagram_sum_matches_spin_sum(beta in 0.05f64..1.5, picks in prop::collection::btree_set(0usize..9, 0..=4)) {
        let set = EdgeSet::rect(3, 3).unwrap();
        let a: Vec<Point> = picks.iter().map(|&i| set.vertices()[i].clone()).collect();
        let ht = correlation_ht(&a, &set, beta, &Budget::default()).unwrap();
        let spin = spin_oracle(&a, &set, beta, &Budget::default()).unwrap();
        prop_assert!((ht.value - spin).abs() < 1e-12);
        prop_assert!(spin >= -1e-12);
    }
}
