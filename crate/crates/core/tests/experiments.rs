use std::path::PathBuf;

use obsent::experiment::{execute, write_artifacts, AssertionMode, ExperimentConfig, IsolatedStart};

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::from_path(&path).unwrap()
}

#[test]
fn isolated_config_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("isolated_minimal.json");
    cfg.output.dir = dir.path().to_path_buf();
    let outcome = execute(&cfg).unwrap();
    assert!(outcome.passed(), "{:?}", outcome.violations);
    let written = write_artifacts(&cfg, &outcome).unwrap();
    let csv = std::fs::read_to_string(&written[0]).unwrap();
    assert_eq!(csv.lines().count(), cfg.grid.steps + 2);
    assert!(csv.starts_with("time,u,w,s_obs,sigma"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&written[1]).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let mut cfg = ExperimentConfig::default();
    cfg.grid.steps = 40;
    let a = execute(&cfg).unwrap();
    let b = execute(&cfg).unwrap();
    assert_eq!(a.ledger_csv, b.ledger_csv);
    assert_eq!(a.summary.to_string(), b.summary.to_string());
}

#[test]
fn strict_mode_flags_a_fine_grained_gibbs_start() {
    let mut cfg = config("isolated_minimal.json");
    cfg.initial.isolated = IsolatedStart::Gibbs;
    // Wide bins merge levels, so the fine-grained Gibbs state is no longer uniform within them.
    cfg.delta = 1.5;
    let outcome = execute(&cfg).unwrap();
    assert!(!outcome.passed());
    assert_eq!(outcome.violations[0].invariant, "initial_equilibrium_membership");
    cfg.assertions = AssertionMode::ReportOnly;
    let outcome = execute(&cfg).unwrap();
    assert!(outcome.passed() && !outcome.violations.is_empty());
}

#[test]
fn fluctuation_config_reports_the_integral_theorem() {
    let mut cfg = config("fluctuation_quench.json");
    cfg.grid.steps = 40;
    let outcome = execute(&cfg).unwrap();
    assert!(outcome.passed(), "{:?}", outcome.violations);
    let ift = outcome.summary["fluctuation"]["ift_average"].as_f64().unwrap();
    assert!((ift - 1.0).abs() <= 1e-10);
    assert!(outcome.ft_csv.as_ref().unwrap().starts_with("delta_s,p_forward"));
}
