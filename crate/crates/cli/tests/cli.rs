use std::path::{Path, PathBuf};
use std::process::Command;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lab"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn baselines() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("baselines")
}

#[test]
fn conjugate_constant_writes_pi_and_exits_zero() {
    let out = tempfile::tempdir().unwrap();
    let st = lab()
        .args(["run", scenarios().join("conjugate_constant.cfg").to_str().unwrap(), "--out-dir"])
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let text = std::fs::read_to_string(out.path().join("conjugate_constant.csv")).unwrap();
    let row = text.lines().find(|l| l.starts_with("0,")).unwrap();
    let t: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((t - std::f64::consts::PI).abs() < 1e-8, "{t}");
}

#[test]
fn window_sweep_has_a_finite_t_star_and_matches_its_baseline() {
    let out = tempfile::tempdir().unwrap();
    let st = lab().args(["run", scenarios().join("prop42_sweep.cfg").to_str().unwrap(), "--out-dir"]).arg(out.path()).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let text = std::fs::read_to_string(out.path().join("prop42_sweep.csv")).unwrap();
    let star = text.lines().find(|l| l.starts_with("t_star,")).unwrap();
    let t: f64 = star.split(',').nth(2).unwrap().parse().unwrap();
    assert!(t.is_finite());
    let st = lab()
        .arg("regress")
        .arg(out.path().join("prop42_sweep.csv"))
        .arg(baselines().join("prop42_sweep.csv"))
        .arg("--tol-file")
        .arg(baselines().join("tolerances.json"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
}

#[test]
fn unknown_experiment_exits_two_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, r#"{"name": "bad", "experiment": "warp_drive"}"#).unwrap();
    let out = lab().arg("run").arg(&cfg).arg("--out-dir").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`experiment`") && err.contains("warp_drive"), "{err}");
}

#[test]
fn malformed_json_and_unknown_param_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("a.cfg");
    std::fs::write(&cfg, r#"{"name": "a", "experiment": "jacobi", "params": {"d": 2, "t_end": 1, "source": {"kind": "scalar", "c": 1}, "tolerance": 1}}"#).unwrap();
    let out = lab().arg("run").arg(&cfg).arg("--out-dir").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerance"));
    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(lab().arg("run").arg(&cfg).arg("--out-dir").arg(dir.path()).status().unwrap().code(), Some(2));
}

#[test]
fn regress_reports_cells_and_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base.csv");
    let new = dir.path().join("new.csv");
    std::fs::write(&base, "# scenario: x\nindex,t,kind\n0,3.141592653589793,crossing\n").unwrap();
    std::fs::write(&new, "# scenario: x\n# generated: unix 1\nindex,t,kind\n0,3.142592653589793,crossing\n").unwrap();
    let tol = dir.path().join("tol.json");
    std::fs::write(&tol, r#"{"default": {"rel": 1e-6, "abs": 0.0}}"#).unwrap();
    let out = lab().arg("regress").arg(&new).arg(&base).arg("--tol-file").arg(&tol).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 0 column t"));
    assert_eq!(lab().arg("regress").arg(&base).arg(&base).status().unwrap().code(), Some(0));
    std::fs::write(&new, "index,t\n0,1\n").unwrap();
    assert_eq!(lab().arg("regress").arg(&new).arg(&base).status().unwrap().code(), Some(1));
}

#[test]
fn list_experiments_names_every_id() {
    let out = lab().arg("list-experiments").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for id in lorentzlab_cli::ExperimentId::ALL {
        assert!(text.lines().any(|l| l.starts_with(id.as_str())), "{}", id.as_str());
    }
}

#[test]
fn every_bundled_scenario_parses() {
    let files = lorentzlab_cli::runner::scenario_files(&scenarios()).unwrap();
    assert!(files.len() >= 12);
    let mut ids = std::collections::BTreeSet::new();
    for f in files {
        let s = lorentzlab_cli::Scenario::load(&f).unwrap();
        assert!(baselines().join(s.table_name()).exists(), "no baseline for {}", s.name);
        ids.insert(s.experiment);
    }
    assert_eq!(ids.len(), lorentzlab_cli::ExperimentId::ALL.len(), "some experiment has no bundled scenario");
}
