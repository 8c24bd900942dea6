//! `lineint` command-line front end.
//!
//! Exit codes: 0 on success, 2 for configuration or I/O problems, 3 when the
//! integration itself fails.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    /// For errors raised while setting things up.
    pub fn config(e: lineint::Error) -> Self {
        Self::Config(e.to_string())
    }

    /// For errors raised by a driver call: bad settings are still the
    /// user's config, anything else is numerical.
    pub fn classify(e: lineint::Error) -> Self {
        use lineint::Error::*;
        match e {
            Config(_) | Parameter(_) | Dimension { .. } => Self::Config(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "lineint", version, about = "Line-integral methods for conservative ODEs")]
struct Cli {
    /// Suppress the summary line on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FileArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for the CSV series and the echoed config.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a benchmark and write the requested CSV series.
    Run(FileArgs),
    /// Print a Butcher tableau: `gauss s`, `hbvm k s` or `trapezoidal nu`.
    Tableau {
        #[arg(required = true, num_args = 1..)]
        spec: Vec<String>,
    },
    /// Print the blended-iteration parameters for s = 1..s_max.
    BlendedTable {
        #[arg(long, default_value_t = 7)]
        s_max: usize,
    },
    /// Error against a reference solution as h is halved.
    Convergence(FileArgs),
    /// |R(q)| on a rectangular grid of the complex plane.
    Stability(FileArgs),
    /// Forward-then-reversed step defect for a list of stepsizes.
    Symmetry(FileArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    let result = match &cli.command {
        Command::Run(a) => commands::run(&a.config, &a.out, quiet),
        Command::Tableau { spec } => commands::tableau(spec),
        Command::BlendedTable { s_max } => commands::blended_table(*s_max),
        Command::Convergence(a) => commands::convergence(&a.config, &a.out, quiet),
        Command::Stability(a) => commands::stability(&a.config, &a.out, quiet),
        Command::Symmetry(a) => commands::symmetry(&a.config, &a.out, quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
