use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn obsent(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obsent")).args(args).current_dir(cwd).output().unwrap()
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const ISOLATED: &str = r#"{
  "model": {"kind": "custom", "segments": [[[0.0, 0.3, 0.0, 0.0], [0.3, 0.5, 0.2, 0.0], [0.0, 0.2, 1.0, 0.1], [0.0, 0.0, 0.1, 1.6]]]},
  "run": "isolated", "grid": {"t_max": 2.0, "steps": 20}, "delta": 0.5, "output": {"dir": ".", "prefix": "iso"}
}"#;

const TWO_LEVEL: &str = r#"{"model": {"kind": "custom", "segments": [[[0.0, 0.0], [0.0, 1.0]]]}, "run": "isolated"}"#;

#[test]
fn validate_accepts_bundled_configs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["open_default.json", "isolated_minimal.json", "multibath.json", "particle.json", "fluctuation_quench.json"] {
        let o = obsent(&["validate", configs().join(name).to_str().unwrap()], dir.path());
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn validate_names_the_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"delta": 0.0}"#);
    let o = obsent(&["validate", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("delta"), "{}", stderr(&o));
}

#[test]
fn validate_rejects_number_breaking_particle_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.json",
        r#"{"model": {"kind": "hopping_particle", "transverse_field": 0.3}, "run": "particle", "betas": [1, 1], "mus": [1, 1],
            "initial": {"system_populations": [0.25, 0.25, 0.25, 0.25]}}"#,
    );
    let o = obsent(&["validate", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o).to_lowercase();
    assert!(err.contains("commut") || err.contains("conserv"), "{err}");
}

fn beta_of(o: &Output) -> f64 {
    let out = stdout(o);
    let line = out.lines().find(|l| l.starts_with("beta* = ")).unwrap_or_else(|| panic!("{out}{}", stderr(o)));
    line["beta* = ".len()..].trim().parse().unwrap()
}

#[test]
fn temperature_of_known_energies() {
    let dir = tempfile::tempdir().unwrap();
    let two = write(dir.path(), "two.json", TWO_LEVEL);
    let b = beta_of(&obsent(&["temperature", &two, "0.25"], dir.path()));
    assert!((b - 3f64.ln()).abs() <= 1e-8, "{b}");
    let iso = write(dir.path(), "iso.json", ISOLATED);
    let mean = (0.0 + 0.5 + 1.0 + 1.6) / 4.0;
    let b = beta_of(&obsent(&["temperature", &iso, &mean.to_string(), "--total"], dir.path()));
    assert!(b.abs() <= 1e-8, "{b}");
    let b = beta_of(&obsent(&["temperature", &iso, "1.2", "--total"], dir.path()));
    assert!(b.is_finite() && b < 0.0, "{b}");
}

#[test]
fn run_writes_ledger_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "iso.json", ISOLATED);
    let o = obsent(&["run", &cfg], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("iso_ledger.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
    assert!(dir.path().join("iso_summary.json").exists());
}

#[test]
fn strict_run_exits_with_assertion_code() {
    let dir = tempfile::tempdir().unwrap();
    let body = ISOLATED.replace(r#""delta": 0.5"#, r#""delta": 1.5, "initial": {"isolated": "gibbs"}"#);
    let cfg = write(dir.path(), "iso.json", &body);
    let o = obsent(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("assertion failed: initial_equilibrium_membership"), "{}", stderr(&o));
}

#[test]
fn open_run_summary_is_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "open.json", r#"{"grid": {"t_max": 10.0, "steps": 60}, "output": {"dir": ".", "prefix": "o"}}"#);
    let o = obsent(&["run", &cfg], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o_summary.json")).unwrap()).unwrap();
    let f = &s["final"];
    let get = |k: &str| f[k].as_f64().unwrap_or_else(|| panic!("missing {k}"));
    let slack = s["slack"].as_f64().unwrap() + s["quadrature_tolerance_max"].as_f64().unwrap();
    assert!(get("sigma_a") >= 0.0);
    assert!(get("sigma_a") <= get("sigma_b") + 1e-8);
    assert!(get("sigma_b") <= get("sigma_c") + slack);
    assert!(get("sigma_c") <= get("sigma_d_tilde") + slack);
    assert!(get("sigma_d").is_finite());
}

#[test]
fn sweep_runs_every_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.json", &ISOLATED.replace("\"iso\"", "\"a\""));
    let b = write(dir.path(), "b.json", &ISOLATED.replace("\"iso\"", "\"b\""));
    let o = Command::new(env!("CARGO_BIN_EXE_obsent"))
        .args(["run", "--sweep", &a, &b])
        .env("OBSENT_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("a_ledger.csv").exists() && dir.path().join("b_ledger.csv").exists());
}

#[test]
fn print_defaults_matches_bundled_config() {
    let dir = tempfile::tempdir().unwrap();
    let bundled = std::fs::read_to_string(configs().join("open_default.json")).unwrap();
    for args in [&["print-defaults"][..], &["--print-defaults"][..]] {
        let o = obsent(args, dir.path());
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), bundled.trim());
    }
}
