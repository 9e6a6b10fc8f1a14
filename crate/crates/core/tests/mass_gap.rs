use std::path::PathBuf;

use ozlab_core::decomposition::{mass_gap_measure, self_consistent_saw, DEFAULT_DELTA, DEFAULT_K};
use ozlab_core::saw::SawEnsemble;
use ozlab_core::Budget;
use serde_json::Value;

/// Set to rewrite the golden files instead of comparing against them.
const BLESS_ENV: &str = "OZLAB_BLESS";

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn saw_mass_gap_matches_golden_file() {
    let ens = SawEnsemble::new(2, -1.2, 12).unwrap();
    let budget = Budget::default();
    let (spec, tables, report) = self_consistent_saw(&ens, &[1.0, 0.0], DEFAULT_DELTA, DEFAULT_K, &budget, 50).unwrap();
    assert!(report.converged);
    let gap = mass_gap_measure(&tables.weight_tables().w, spec.t_hat()).unwrap();
    assert!(gap.positive && gap.nu_hat > 0.0, "{gap:?}");
    let value = serde_json::to_value(&gap).unwrap();
    let path = golden("mass_gap_saw_c12.json");
    if std::env::var_os(BLESS_ENV).is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap() + "\n").unwrap();
        return;
    }
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let nu = stored["nu_hat"].as_f64().unwrap();
    assert!((gap.nu_hat - nu).abs() <= 1e-12 * nu.abs(), "{} vs golden {nu}", gap.nu_hat);
    assert_eq!(value["argmin"], stored["argmin"]);
    assert_eq!(value["n_entries"], stored["n_entries"]);
    assert_eq!(value["cutoff"], stored["cutoff"]);
}
