//! `pdflow` command-line front end.
//!
//! Exit codes: 0 converged, 2 iteration cap reached, 1 usage or run error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pdflow", version, about = "Primal-dual solvers for linearly constrained convex problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Stop once the feasibility violation drops to this value.
    #[arg(long)]
    pub stop_res: Option<f64>,
    /// Record wall-clock times (outputs are then no longer bit-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverName {
    Fipd,
    Ilpd,
    Alm,
    LinAlm,
}

impl SolverName {
    pub fn label(self) -> &'static str {
        match self {
            SolverName::Fipd => "fipd",
            SolverName::Ilpd => "ilpd",
            SolverName::Alm => "alm",
            SolverName::LinAlm => "lin-alm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    L1l2,
    Qp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenFamily {
    L1l2,
    Qp,
    /// `½‖x − c‖²` subject to `Ax = b`.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Desk,
    Full,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem file.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum, default_value = "fipd")]
        solver: SolverName,
        #[command(flatten)]
        common: Common,
    },
    /// Run solvers over a seeded benchmark family and write summary.csv.
    Bench {
        #[arg(value_enum)]
        family: Family,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        /// Solver to run (repeatable).
        #[arg(long = "solver", value_enum)]
        solvers: Vec<SolverName>,
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the continuous-time dynamic on a smooth problem file.
    Dynamics {
        problem: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a seeded instance as a problem file.
    Generate {
        #[arg(value_enum)]
        family: GenFamily,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Rows and columns for the quadratic family.
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the planted solution (signal, feasible point or saddle x*).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Repeat the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Write to this directory instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let args: Vec<String> = std::env::args().skip(1).collect();
    match commands::execute(cli, args, None) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
