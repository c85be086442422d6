//! Command-line harness for the hydroelastic control toolkit.

pub mod commands;
pub mod config;
pub mod data;
pub mod failure;
pub mod io;
pub mod report;
pub mod suites;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::failure::{Failure, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(
    name = "hydroctrl",
    version,
    about = "Simulation, verification and control of hydroelastic waves"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random probe and datum.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted config key and JSON value, e.g. `grid.n=128`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Shape,
    Elastic,
    Reduction,
    Adjoint,
    Ingham,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Shape => "shape",
            Suite::Elastic => "elastic",
            Suite::Reduction => "reduction",
            Suite::Adjoint => "adjoint",
            Suite::Ingham => "ingham",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Linear,
    Nonlinear,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the nonlinear forward problem and write the trajectory and norms.
    Simulate,
    /// Run a property suite and write its report.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        /// Corrupt one reduction coefficient so the closure checks must fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Synthesize and certify a control.
    Control {
        #[arg(value_enum)]
        mode: Mode,
    },
    /// Ingham ratios at `n_max` and `2·n_max`.
    InghamSweep,
    /// Closure defects and per-stage residual orders of the reduction.
    ReduceReport,
}

/// Cap the worker pool from `HYDROCTRL_THREADS`; later calls are no-ops.
pub fn init_threads() -> Result<(), Failure> {
    if let Ok(raw) = std::env::var("HYDROCTRL_THREADS") {
        let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Failure::config(format!(
                "HYDROCTRL_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<commands::Outcome, Failure> {
    init_threads()?;
    let cfg = RunConfig::load(
        cli.config.as_deref(),
        &cli.overrides,
        cli.seed,
        cli.out.as_deref(),
    )?;
    match &cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Verify {
            suite,
            inject_fault,
        } => commands::verify(&cfg, suite.name(), *inject_fault),
        Command::Control { mode: Mode::Linear } => commands::control_linear(&cfg),
        Command::Control {
            mode: Mode::Nonlinear,
        } => commands::control_nonlinear(&cfg),
        Command::InghamSweep => commands::ingham_sweep(&cfg),
        Command::ReduceReport => commands::reduce_report(&cfg),
    }
}

/// Parse arguments (program name first), run, print, and return the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            println!("{}", out.summary);
            out.code
        }
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}
