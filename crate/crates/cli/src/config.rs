//! Scenario files: JSON objects naming a metric, an experiment and its
//! parameters.

use std::path::{Path, PathBuf};

use lorentzlab::metric::catalog::MetricSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::experiments::ExperimentId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("`{path}`: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl ConfigError {
    pub fn invalid(path: &Path, message: impl Into<String>) -> Self {
        ConfigError::Invalid { path: path.to_path_buf(), message: message.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Main CSV table, relative to the output directory.
    #[serde(default)]
    pub table: Option<String>,
    /// JSON summary, relative to the output directory.
    #[serde(default)]
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    experiment: String,
    #[serde(default)]
    metric: Option<MetricSpec>,
    #[serde(default = "empty_object")]
    params: Value,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    outputs: Outputs,
    #[serde(default)]
    allow_violation: bool,
    /// Free-form flags recorded in the output header, e.g. properties the
    /// metric is assumed to have but that are not verified.
    #[serde(default)]
    assumptions: Vec<String>,
    #[serde(default)]
    description: Option<String>,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub experiment: ExperimentId,
    pub metric: Option<MetricSpec>,
    pub params: Value,
    pub seed: u64,
    pub outputs: Outputs,
    pub allow_violation: bool,
    pub assumptions: Vec<String>,
    pub description: Option<String>,
    pub source: PathBuf,
}

impl Scenario {
    pub fn parse(text: &str, source: &Path) -> Result<Self, ConfigError> {
        let raw: RawScenario = serde_json::from_str(text).map_err(|e| ConfigError::invalid(source, e.to_string()))?;
        let experiment = ExperimentId::parse(&raw.experiment).ok_or_else(|| {
            ConfigError::invalid(
                source,
                format!("key `experiment`: unknown experiment id `{}` (see `lab list-experiments`)", raw.experiment),
            )
        })?;
        if !raw.params.is_object() {
            return Err(ConfigError::invalid(source, "key `params`: expected an object"));
        }
        if raw.name.is_empty() || raw.name.contains(['/', '\\']) {
            return Err(ConfigError::invalid(source, "key `name`: must be a non-empty file-safe name"));
        }
        Ok(Scenario {
            name: raw.name,
            experiment,
            metric: raw.metric,
            params: raw.params,
            seed: raw.seed,
            outputs: raw.outputs,
            allow_violation: raw.allow_violation,
            assumptions: raw.assumptions,
            description: raw.description,
            source: source.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text, path)
    }

    /// Typed experiment parameters; unknown keys are rejected by name.
    pub fn params<T: DeserializeOwned>(&self) -> Result<T, ConfigError> {
        serde_json::from_value(self.params.clone())
            .map_err(|e| ConfigError::invalid(&self.source, format!("key `params`: {e}")))
    }

    pub fn table_name(&self) -> String {
        self.outputs.table.clone().unwrap_or_else(|| format!("{}.csv", self.name))
    }

    pub fn report_name(&self) -> String {
        self.outputs.report.clone().unwrap_or_else(|| format!("{}.json", self.name))
    }
}
