use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lorentzlab_cli::experiments::ExperimentId;
use lorentzlab_cli::regress::{regression_compare_files, RegressError, Tolerances};
use lorentzlab_cli::runner::{overall_exit, run_many, RunOptions};

#[derive(Parser)]
#[command(name = "lab", version, about = "Run lorentzlab scenarios and compare result tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or every scenario in a directory.
    Run {
        target: PathBuf,
        /// Worker threads when running a directory.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the seed of every scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Compare a table against a baseline, cell by cell.
    Regress {
        new: PathBuf,
        baseline: PathBuf,
        /// JSON file `{"default": {"rel": .., "abs": ..}, "columns": {..}}`.
        #[arg(long)]
        tol_file: Option<PathBuf>,
    },
    /// List experiment ids and what they run.
    ListExperiments,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return code(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.command {
        Command::Run { target, jobs, seed, out_dir } => {
            let opts = RunOptions { out_dir, seed };
            let results = match run_many(&target, &opts, jobs) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: cannot read `{}`: {e}", target.display());
                    return code(2);
                }
            };
            if results.is_empty() {
                eprintln!("error: no scenario files in `{}`", target.display());
                return code(2);
            }
            for r in &results {
                let line = format!("{:<28} {:?} exit={} {}", r.name, r.status, r.exit_code, r.message);
                if r.exit_code == 0 {
                    println!("{line}");
                } else {
                    eprintln!("{line}");
                }
            }
            code(overall_exit(&results))
        }
        Command::Regress { new, baseline, tol_file } => {
            let tol = match tol_file.as_deref().map(Tolerances::load).transpose() {
                Ok(t) => t.unwrap_or_default(),
                Err(e) => {
                    eprintln!("error: {e}");
                    return code(2);
                }
            };
            match regression_compare_files(&new, &baseline, &tol) {
                Ok(rep) if rep.pass() => {
                    println!("pass: {} cells within tolerance", rep.cells);
                    code(0)
                }
                Ok(rep) => {
                    eprintln!("fail: {} of {} cells out of tolerance", rep.failures.len(), rep.cells);
                    for f in &rep.failures {
                        eprintln!("  row {} column {}: new {} baseline {} ({})", f.row, f.column, f.new, f.baseline, f.reason);
                    }
                    code(1)
                }
                Err(e @ RegressError::SchemaMismatch(_)) => {
                    eprintln!("fail: {e}");
                    code(1)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(2)
                }
            }
        }
        Command::ListExperiments => {
            for id in ExperimentId::ALL {
                println!("{:<18} {:<42} {}", id.as_str(), id.operation(), id.summary());
            }
            code(0)
        }
    }
}
