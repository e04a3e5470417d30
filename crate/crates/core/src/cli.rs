//! Command-line front end: `run`, `aggregate` and `qerror`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiment::{aggregate, emit_qerror_comparison, parse_config, run_plan, Executor, ExperimentPlan};
use crate::losses::Variant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CELL_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vcr", about = "Value-consistent representation learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run every (env, variant, seed) cell of a config file, then aggregate.
    Run {
        config: PathBuf,
        /// Comma-separated seeds, replacing the config's `seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated variants (VCR, MSE, MSE_A, SPR_only).
        #[arg(long, value_delimiter = ',')]
        variant: Option<Vec<Variant>>,
        /// Comma-separated environments.
        #[arg(long, value_delimiter = ',')]
        env: Option<Vec<String>>,
        /// Output root, replacing the config's `output_root`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run cells as up to this many child processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Run the cells without writing the aggregate report.
        #[arg(long, hide = true)]
        cell_only: bool,
    },
    /// Aggregate final scores of the run directories under each path.
    Aggregate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Where to write aggregate.txt and aggregate.csv (default: the first path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-step Q-error mean and std per variant across seeds.
    Qerror {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Where to write qerror_comparison.csv (default: the first path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn apply_flags(
    mut plan: ExperimentPlan,
    seeds: Option<Vec<u64>>,
    variant: Option<Vec<Variant>>,
    env: Option<Vec<String>>,
    out: Option<PathBuf>,
) -> Result<ExperimentPlan> {
    if let Some(s) = seeds {
        plan.seeds = s;
    }
    if let Some(v) = variant {
        plan.variants = v;
    }
    if let Some(e) = env {
        plan.envs = e;
    }
    if let Some(o) = out {
        plan.output_root = o;
    }
    plan.validate()?;
    Ok(plan)
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_CELL_FAILED,
    }
}

/// Write the aggregate report and Q-error comparison for `dirs` into `out`.
fn write_reports(dirs: &[PathBuf], out: &Path, with_scores: bool, with_qerror: bool) -> Result<bool> {
    let mut clean = true;
    if with_scores {
        let rep = aggregate(dirs)?;
        clean &= rep.errors.is_empty();
        write(&out.join("aggregate.txt"), &rep.to_text())?;
        write(&out.join("aggregate.csv"), &rep.to_csv())?;
        print!("{}", rep.to_text());
    }
    if with_qerror {
        let cmp = emit_qerror_comparison(dirs)?;
        clean &= cmp.errors.is_empty();
        for e in &cmp.errors {
            eprintln!("error: {e}");
        }
        write(&out.join("qerror_comparison.csv"), &cmp.to_csv())?;
    }
    Ok(clean)
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Cmd::Run {
            config,
            seeds,
            variant,
            env,
            out,
            jobs,
            cell_only,
        } => {
            let plan = match parse_config(&config).and_then(|p| apply_flags(p, seeds, variant, env, out)) {
                Ok(p) => p,
                Err(e) => return report_error(&e),
            };
            let executor = if jobs > 1 && !cell_only {
                match std::env::current_exe() {
                    Ok(exe) => Executor::Subprocess { exe, config, jobs },
                    Err(e) => return report_error(&Error::io("current executable", e)),
                }
            } else {
                Executor::InProcess
            };
            let outcome = match run_plan(&plan, &executor) {
                Ok(o) => o,
                Err(e) => return report_error(&e),
            };
            for (cell, err) in &outcome.failed {
                eprintln!(
                    "cell {} / {} / seed {} failed: {err}",
                    cell.env, cell.variant, cell.seed
                );
            }
            if !cell_only {
                let root = vec![plan.output_root.clone()];
                if let Err(e) = write_reports(&root, &plan.output_root, true, true) {
                    eprintln!("error: {e}");
                    return EXIT_CELL_FAILED;
                }
            }
            if outcome.failed.is_empty() {
                EXIT_OK
            } else {
                EXIT_CELL_FAILED
            }
        }
        Cmd::Aggregate { dirs, out } => {
            let out = out.unwrap_or_else(|| dirs[0].clone());
            match write_reports(&dirs, &out, true, false) {
                Ok(true) => EXIT_OK,
                Ok(false) => EXIT_CELL_FAILED,
                Err(e) => report_error(&e),
            }
        }
        Cmd::Qerror { dirs, out } => {
            let out = out.unwrap_or_else(|| dirs[0].clone());
            match write_reports(&dirs, &out, false, true) {
                Ok(true) => EXIT_OK,
                Ok(false) => EXIT_CELL_FAILED,
                Err(e) => report_error(&e),
            }
        }
    }
}
