//! Running scenarios and writing their artifacts.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{ConfigError, Scenario};
use crate::experiments::{self, Check, ExperimentError};
use crate::table::{self, Metadata, Table};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    ChecksFailed,
    ExperimentFailed,
    ConfigInvalid,
}

impl Status {
    pub fn exit_code(self, allow_violation: bool) -> i32 {
        match self {
            Status::Pass => 0,
            Status::ChecksFailed | Status::ExperimentFailed if allow_violation => 0,
            Status::ChecksFailed | Status::ExperimentFailed => 1,
            Status::ConfigInvalid => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub experiment: String,
    pub operation: String,
    pub seed: u64,
    pub version: String,
    pub metric: Value,
    pub assumptions: Vec<String>,
    pub status: Status,
    pub allow_violation: bool,
    pub error: Option<String>,
    pub checks: Vec<Check>,
    pub summary: Value,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub source: PathBuf,
    pub name: String,
    pub status: Status,
    pub exit_code: i32,
    pub message: String,
    pub table_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
}

fn metadata(scn: &Scenario) -> Metadata {
    let mut m = Metadata::default();
    m.add("scenario", &scn.name);
    m.add("experiment", scn.experiment.as_str());
    m.add("seed", scn.seed);
    m.add("tool", format!("lab {VERSION}"));
    if let Some(spec) = &scn.metric {
        m.add("metric", serde_json::to_string(spec).unwrap_or_default());
    }
    for a in &scn.assumptions {
        m.add("assumption", a);
    }
    m
}

fn config_failure(source: &Path, name: String, e: impl std::fmt::Display) -> ScenarioResult {
    ScenarioResult {
        source: source.to_path_buf(),
        name,
        status: Status::ConfigInvalid,
        exit_code: 2,
        message: e.to_string(),
        table_path: None,
        report_path: None,
    }
}

/// Runs one parsed scenario and writes `<table>.csv` and `<report>.json`
/// into `opts.out_dir`.
pub fn run_scenario(scn: &Scenario, opts: &RunOptions) -> ScenarioResult {
    let mut scn = scn.clone();
    if let Some(s) = opts.seed {
        scn.seed = s;
    }
    let (status, error, table, checks, summary) = match experiments::run(&scn) {
        Ok(out) => {
            let status = if out.passed() { Status::Pass } else { Status::ChecksFailed };
            (status, None, out.table, out.checks, out.summary)
        }
        Err(ExperimentError::Config(msg)) => {
            return config_failure(&scn.source, scn.name.clone(), ConfigError::invalid(&scn.source, msg));
        }
        Err(ExperimentError::Failed(msg)) => {
            let mut t = Table::new(&["error"]);
            t.push(vec![msg.clone().into()]);
            (Status::ExperimentFailed, Some(msg), t, Vec::new(), Value::Null)
        }
    };
    let table_path = opts.out_dir.join(scn.table_name());
    let report_path = opts.out_dir.join(scn.report_name());
    let report = RunReport {
        scenario: scn.name.clone(),
        experiment: scn.experiment.as_str().into(),
        operation: scn.experiment.operation().into(),
        seed: scn.seed,
        version: VERSION.into(),
        metric: serde_json::to_value(&scn.metric).unwrap_or(Value::Null),
        assumptions: scn.assumptions.clone(),
        status,
        allow_violation: scn.allow_violation,
        error: error.clone(),
        checks: checks.clone(),
        summary,
    };
    let written = table::write_csv(&table_path, &metadata(&scn), &table).and_then(|_| {
        let text = serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?;
        std::fs::write(&report_path, text + "\n")
    });
    if let Err(e) = written {
        return ScenarioResult {
            source: scn.source.clone(),
            name: scn.name.clone(),
            status: Status::ExperimentFailed,
            exit_code: 1,
            message: format!("cannot write artifacts: {e}"),
            table_path: None,
            report_path: None,
        };
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    let message = match (&error, status) {
        (Some(e), _) => e.clone(),
        (None, Status::ChecksFailed) => failed.join("; "),
        _ => format!("{} checks passed", checks.len()),
    };
    ScenarioResult {
        source: scn.source.clone(),
        name: scn.name.clone(),
        status,
        exit_code: status.exit_code(scn.allow_violation),
        message,
        table_path: Some(table_path),
        report_path: Some(report_path),
    }
}

pub fn run_path(path: &Path, opts: &RunOptions) -> ScenarioResult {
    match Scenario::load(path) {
        Ok(scn) => run_scenario(&scn, opts),
        Err(e) => config_failure(path, path.display().to_string(), e),
    }
}

/// Scenario files in `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "cfg" || x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs a file, or every scenario in a directory on `jobs` threads.
pub fn run_many(target: &Path, opts: &RunOptions, jobs: usize) -> std::io::Result<Vec<ScenarioResult>> {
    if target.is_file() {
        return Ok(vec![run_path(target, opts)]);
    }
    let files = scenario_files(target)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(std::io::Error::other)?;
    Ok(pool.install(|| files.par_iter().map(|f| run_path(f, opts)).collect()))
}

pub fn overall_exit(results: &[ScenarioResult]) -> i32 {
    if results.iter().any(|r| r.exit_code == 2) {
        2
    } else {
        results.iter().map(|r| r.exit_code).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(text: &str) -> Scenario {
        Scenario::parse(text, Path::new("inline.cfg")).unwrap()
    }

    #[test]
    fn constant_source_writes_pi() {
        let dir = tempfile::tempdir().unwrap();
        let scn = scenario(
            r#"{"name": "c1", "experiment": "jacobi",
                "params": {"source": {"kind": "scalar", "c": 1.0}, "d": 3, "t_end": 4.0,
                           "expect_first": 3.141592653589793}}"#,
        );
        let opts = RunOptions { out_dir: dir.path().to_path_buf(), seed: None };
        let r = run_scenario(&scn, &opts);
        assert_eq!(r.exit_code, 0, "{}", r.message);
        let (h, rows) = table::read_csv(&r.table_path.unwrap()).unwrap();
        assert_eq!(h, vec!["index", "t", "kind"]);
        let t: f64 = rows[0][1].parse().unwrap();
        assert!((t - std::f64::consts::PI).abs() < 1e-8);
        let report: Value = serde_json::from_str(&std::fs::read_to_string(r.report_path.unwrap()).unwrap()).unwrap();
        assert_eq!(report["status"], "pass");
    }

    #[test]
    fn failed_check_and_allowed_violation() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out_dir: dir.path().to_path_buf(), seed: None };
        let text = r#"{"name": "c2", "experiment": "jacobi",
            "params": {"source": {"kind": "scalar", "c": 1.0}, "d": 1, "t_end": 4.0, "expect_first": 3.0}}"#;
        let r = run_scenario(&scenario(text), &opts);
        assert_eq!((r.status, r.exit_code), (Status::ChecksFailed, 1));
        let allowed = text.replacen("\"name\"", "\"allow_violation\": true, \"name\"", 1);
        assert_eq!(run_scenario(&scenario(&allowed), &opts).exit_code, 0);
    }

    #[test]
    fn library_refusal_is_an_experiment_failure() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out_dir: dir.path().to_path_buf(), seed: None };
        // r >= T/2 is rejected by the bound experiment.
        let scn = scenario(r#"{"name": "c3", "experiment": "theta_bound",
            "params": {"deltas": [0.0], "dims": [2], "big_ts": [2.0], "r_over_t": 0.6}}"#);
        let r = run_scenario(&scn, &opts);
        assert_eq!((r.status, r.exit_code), (Status::ExperimentFailed, 1));
    }

    #[test]
    fn bad_params_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out_dir: dir.path().to_path_buf(), seed: None };
        let scn = scenario(r#"{"name": "c4", "experiment": "jacobi", "params": {"d": 2, "t_end": 1.0, "sorce": 1}}"#);
        let r = run_scenario(&scn, &opts);
        assert_eq!(r.exit_code, 2);
        assert!(r.message.contains("sorce"), "{}", r.message);
        let scn = scenario(r#"{"name": "c5", "experiment": "cone", "params": {"p": [0, 0], "t_max": 1}}"#);
        let r = run_scenario(&scn, &opts);
        assert_eq!(r.exit_code, 2);
        assert!(r.message.contains("`metric`"), "{}", r.message);
    }

    #[test]
    fn seed_override_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out_dir: dir.path().to_path_buf(), seed: Some(9) };
        let scn = scenario(r#"{"name": "c6", "experiment": "riccati_compare", "params": {"pairs": 2, "d": 2, "t_end": 0.5}}"#);
        let r = run_scenario(&scn, &opts);
        assert_eq!(r.exit_code, 0, "{}", r.message);
        let text = std::fs::read_to_string(r.table_path.unwrap()).unwrap();
        assert!(text.contains("# seed: 9\n"));
    }
}
