use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ifdflow::scenario::{self, SweepParam};

/// Finite-volume runs of fitness-driven cross-diffusion systems.
#[derive(Parser)]
#[command(name = "ifdflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a scenario and report the structural checks without running it.
    Check {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a scenario and write its run directory.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Run directory (defaults to the scenario's `output`, else runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario once per parameter value and aggregate the results.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// One of dt, h, delta, M, eta.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; `inf` is accepted.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs.
        #[arg(long, env = "IFDFLOW_JOBS", default_value_t = 1)]
        jobs: usize,
    },
}

fn load(path: &Path) -> Result<scenario::Scenario> {
    scenario::load_scenario(path).with_context(|| format!("loading {}", path.display()))
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Check { scenario } => {
            let s = load(&scenario)?;
            let report = scenario::model_report(&s)?;
            print!("{}", report.summary());
            Ok(if report.am4.holds { 0 } else { 1 })
        }
        Command::Run { scenario, out } => {
            let s = load(&scenario)?;
            let dir = s.output_dir(out.as_deref());
            let outcome = scenario::execute(&s, &dir).with_context(|| format!("running {}", s.name))?;
            let summary = std::fs::read_to_string(dir.join("summary.txt")).unwrap_or_default();
            print!("{summary}");
            println!("run directory: {}", dir.display());
            Ok(outcome.exit_code)
        }
        Command::Sweep {
            scenario,
            param,
            values,
            out,
            jobs,
        } => {
            let s = load(&scenario)?;
            let values = scenario::parse_values(&values)?;
            let dir = out.unwrap_or_else(|| s.output_dir(None).join(format!("sweep_{param}")));
            let outcome = scenario::sweep(&s, param, &values, &dir, jobs.max(1))?;
            let summary = std::fs::read_to_string(dir.join("sweep_summary.txt")).unwrap_or_default();
            print!("{summary}");
            println!("sweep table: {}", dir.join("sweep.csv").display());
            Ok(outcome.exit_code)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
