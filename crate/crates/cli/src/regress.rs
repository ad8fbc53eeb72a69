//! Cell-by-cell comparison of a table against a stored baseline.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RegressError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("cannot read `{path}`: {message}")]
    Read { path: String, message: String },
    #[error("tolerance file `{path}`: {message}")]
    BadTolerances { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    #[serde(default)]
    pub rel: f64,
    #[serde(default)]
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rel: 1e-9, abs: 1e-12 }
    }
}

/// Default tolerance plus per-column overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default)]
    pub default: Tolerance,
    #[serde(default)]
    pub columns: BTreeMap<String, Tolerance>,
}

impl Tolerances {
    pub fn uniform(rel: f64, abs: f64) -> Self {
        Self { default: Tolerance { rel, abs }, columns: BTreeMap::new() }
    }

    pub fn for_column(&self, name: &str) -> Tolerance {
        self.columns.get(name).copied().unwrap_or(self.default)
    }

    pub fn load(path: &Path) -> Result<Self, RegressError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RegressError::BadTolerances { path: path.display().to_string(), message: e.to_string() })?;
        serde_json::from_str(&text)
            .map_err(|e| RegressError::BadTolerances { path: path.display().to_string(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub row: usize,
    pub column: String,
    pub new: String,
    pub baseline: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressReport {
    pub cells: usize,
    pub failures: Vec<CellFailure>,
}

impl RegressReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

fn parse_num(s: &str) -> Option<f64> {
    match s {
        "NaN" | "nan" => Some(f64::NAN),
        _ => s.parse::<f64>().ok(),
    }
}

fn compare_cell(new: &str, base: &str, tol: Tolerance) -> Option<String> {
    match (parse_num(new), parse_num(base)) {
        (Some(a), _) if a.is_nan() => Some("NaN in new table".into()),
        (Some(a), Some(b)) => {
            if a == b {
                return None;
            }
            if !(a.is_finite() && b.is_finite()) {
                return Some("non-finite mismatch".into());
            }
            let diff = (a - b).abs();
            let allowed = tol.abs + tol.rel * b.abs();
            if diff <= allowed {
                None
            } else {
                Some(format!("|diff| = {diff:e} > {allowed:e}"))
            }
        }
        _ if new == base => None,
        _ => Some("text differs".into()),
    }
}

/// Per-cell relative comparison of two tables with the same header and
/// row count.
pub fn regression_compare(
    new: &(Vec<String>, Vec<Vec<String>>),
    baseline: &(Vec<String>, Vec<Vec<String>>),
    tolerances: &Tolerances,
) -> Result<RegressReport, RegressError> {
    let (nh, nrows) = new;
    let (bh, brows) = baseline;
    if nh != bh {
        return Err(RegressError::SchemaMismatch(format!("columns {nh:?} vs {bh:?}")));
    }
    if nrows.len() != brows.len() {
        return Err(RegressError::SchemaMismatch(format!("{} rows vs {} rows", nrows.len(), brows.len())));
    }
    let mut failures = Vec::new();
    let mut cells = 0;
    for (i, (nr, br)) in nrows.iter().zip(brows).enumerate() {
        if nr.len() != nh.len() || br.len() != bh.len() {
            return Err(RegressError::SchemaMismatch(format!("row {i} has the wrong width")));
        }
        for (j, (a, b)) in nr.iter().zip(br).enumerate() {
            cells += 1;
            if let Some(reason) = compare_cell(a, b, tolerances.for_column(&nh[j])) {
                failures.push(CellFailure { row: i, column: nh[j].clone(), new: a.clone(), baseline: b.clone(), reason });
            }
        }
    }
    Ok(RegressReport { cells, failures })
}

pub fn regression_compare_files(new: &Path, baseline: &Path, tolerances: &Tolerances) -> Result<RegressReport, RegressError> {
    let read = |p: &Path| {
        crate::table::read_csv(p).map_err(|e| RegressError::Read { path: p.display().to_string(), message: e.to_string() })
    };
    regression_compare(&read(new)?, &read(baseline)?, tolerances)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[&str]]) -> (Vec<String>, Vec<Vec<String>>) {
        (
            vec!["kind".into(), "t".into()],
            rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        )
    }

    #[test]
    fn identical_tables_pass() {
        let a = t(&[&["first", "3.141592653589793"], &["second", ""]]);
        let rep = regression_compare(&a, &a, &Tolerances::default()).unwrap();
        assert!(rep.pass());
        assert_eq!(rep.cells, 4);
    }

    #[test]
    fn perturbed_conjugate_time_fails_with_coordinates() {
        let base = t(&[&["first", "3.141592653589793"]]);
        let new = t(&[&["first", &(std::f64::consts::PI + 1e-3).to_string()]]);
        let rep = regression_compare(&new, &base, &Tolerances::uniform(1e-6, 0.0)).unwrap();
        assert!(!rep.pass());
        assert_eq!((rep.failures[0].row, rep.failures[0].column.as_str()), (0, "t"));
        let loose = regression_compare(&new, &base, &Tolerances::uniform(1e-2, 0.0)).unwrap();
        assert!(loose.pass());
    }

    #[test]
    fn nan_always_fails() {
        let base = t(&[&["first", "NaN"]]);
        let rep = regression_compare(&base, &base, &Tolerances::uniform(1e300, 1e300)).unwrap();
        assert!(!rep.pass());
    }

    #[test]
    fn schema_mismatch() {
        let a = t(&[&["first", "1"]]);
        let b = t(&[&["first", "1"], &["x", "2"]]);
        assert!(matches!(regression_compare(&a, &b, &Tolerances::default()), Err(RegressError::SchemaMismatch(_))));
        let mut c = a.clone();
        c.0[1] = "s".into();
        assert!(matches!(regression_compare(&a, &c, &Tolerances::default()), Err(RegressError::SchemaMismatch(_))));
    }

    #[test]
    fn per_column_override() {
        let mut tol = Tolerances::uniform(0.0, 0.0);
        tol.columns.insert("t".into(), Tolerance { rel: 0.0, abs: 0.5 });
        let rep = regression_compare(&t(&[&["a", "1.2"]]), &t(&[&["a", "1.0"]]), &tol).unwrap();
        assert!(rep.pass());
    }
}
