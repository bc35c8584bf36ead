//! Configuration-driven command line for planar diffeomorphic registration.
//!
//! Subcommands: `register` (solve a registration problem), `modal` (build
//! reduced bases and error sweeps), `check` (numerical property suite), and
//! `flow-eval` (dump a flow solution for given coefficients).
//!
//! Exit codes: 0 success, 1 validation failure, 2 numerical failure,
//! 3 property-check failure.

mod check;
mod config;
mod floweval;
mod modal_cmd;
mod register;

use clap::{Args, Parser, Subcommand};
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    ChecksFailed(String),
}

impl CliError {
    pub fn numerical(e: flowmorph::Error) -> Self {
        CliError::Numerical(e.to_string())
    }

    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(1),
            CliError::Numerical(_) => ExitCode::from(2),
            CliError::ChecksFailed(_) => ExitCode::from(3),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical: {msg}"),
            CliError::ChecksFailed(msg) => write!(f, "checks failed: {msg}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "flowmorph",
    version,
    about = "Diffeomorphic registration in bounded planar domains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for data-parallel sections.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a registration problem and write its artifacts.
    Register {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated parameter values; runs one registration per
        /// value, overriding the field shift.
        #[arg(long, value_delimiter = ',')]
        param_sweep: Option<Vec<f64>>,
    },
    /// Build modal bases and write projection/objective error sweeps.
    Modal {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the numerical property suite and report each measurement.
    Check {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Integrate the flow for given coefficients and dump the trajectories.
    FlowEval {
        #[command(flatten)]
        common: CommonArgs,
    },
}

pub struct RunContext {
    pub config: config::RunConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

fn prepare(common: &CommonArgs) -> Result<RunContext, CliError> {
    if let Some(threads) = common.threads {
        // A second invocation in-process would fail; harmless for a CLI.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let config = config::RunConfig::from_file(&common.config)?;
    let out_dir = common
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", out_dir.display())))?;
    let seed = common.seed.or(config.seed).unwrap_or(0);
    Ok(RunContext {
        config,
        out_dir,
        seed,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Register {
            common,
            param_sweep,
        } => {
            let ctx = prepare(&common)?;
            match param_sweep {
                None => register::run(&ctx, None, &ctx.out_dir),
                Some(values) => {
                    for value in values {
                        let sub = ctx.out_dir.join(format!("sweep_{value}"));
                        std::fs::create_dir_all(&sub)?;
                        register::run(&ctx, Some(value), &sub)?;
                    }
                    Ok(())
                }
            }
        }
        Command::Modal { common } => {
            let ctx = prepare(&common)?;
            modal_cmd::run(&ctx)
        }
        Command::Check { common } => {
            let ctx = prepare(&common)?;
            check::run(&ctx)
        }
        Command::FlowEval { common } => {
            let ctx = prepare(&common)?;
            floweval::run(&ctx)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
