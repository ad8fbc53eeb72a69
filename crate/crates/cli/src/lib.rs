//! Scenario runner for lorentzlab: JSON scenario files in, CSV tables and
//! JSON reports out, plus table regression against stored baselines.

pub mod config;
pub mod experiments;
pub mod regress;
pub mod runner;
pub mod table;

pub use config::{ConfigError, Scenario};
pub use experiments::{ExperimentId, Outcome};
pub use regress::{regression_compare, regression_compare_files, RegressError, RegressReport, Tolerances};
pub use runner::{run_many, run_path, run_scenario, RunOptions, ScenarioResult, Status};
