use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hamlearn_cli::commands;
use hamlearn_cli::config::{MethodChoice, Overrides};
use hamlearn_cli::figures::Figure;
use hamlearn_cli::{ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "hamlearn", version, about = "Learn Lindbladians from Pauli expectation traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodChoice>,
    #[arg(long)]
    qubits: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one trace CSV per (observable, state) pair of the plan.
    Simulate(Common),
    /// Fit traces and solve for the plan parameters.
    Recover {
        #[command(flatten)]
        common: Common,
        /// Directory holding the trace CSVs; `<out>/traces` by default.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Shadow estimates of Pauli transfer-matrix entries.
    Shadows(Common),
    /// Median and quartile error curves for a figure workload.
    Figure {
        #[arg(value_enum)]
        which: Figure,
        #[command(flatten)]
        common: Common,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides { seed: c.seed, out: c.out.clone(), method: c.method, qubits: c.qubits })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate(c) => {
            let files = commands::simulate(&load(&c)?)?;
            println!("wrote {} files", files.len());
        }
        Command::Recover { common, traces } => {
            let report = commands::recover(&load(&common)?, traces.as_deref())?;
            for r in &report.rows {
                match r.abs_error {
                    Some(e) => println!("{:<18} {:<18} {:>14.6e}  error {:.3e}", r.parameter, r.method, r.estimate, e),
                    None => println!("{:<18} {:<18} {:>14.6e}", r.parameter, r.method, r.estimate),
                }
            }
        }
        Command::Shadows(c) => {
            let est = commands::shadows(&load(&c)?)?;
            println!("estimated {} overlaps", est.len());
        }
        Command::Figure { which, common } => {
            for r in commands::figure(&load(&common)?, which)? {
                println!("{} {:<18} {:<18} x={:<12.4e} median={:.3e}", r.figure, r.label, r.method, r.x, r.median);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
