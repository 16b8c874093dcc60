use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;
mod tables;

use settings::SolveArgs;

/// Risk-aware alpha-fair routing for air-mobility networks.
#[derive(Debug, Parser)]
#[command(name = "fairroute", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check network and scenario files.
    Validate {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
    /// Generate a synthetic case.
    Gen(GenArgs),
    /// Solve the alpha-fair problem.
    Solve {
        #[command(flatten)]
        args: SolveArgs,
        /// Sample this many feasible allocations and test the fairness conditions.
        #[arg(long, default_value_t = 0)]
        check: usize,
    },
    /// Solve both the fair and the max-sum problem on the same constraints.
    Compare(SolveArgs),
    /// Solve fair and max-sum over a list of delta values.
    Sweep {
        #[command(flatten)]
        args: SolveArgs,
        /// Comma-separated delta values [default: 0.1,0.2,...,0.9].
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 17)]
    pub nodes: usize,
    #[arg(long, default_value_t = 72)]
    pub links: usize,
    #[arg(long, default_value_t = 200)]
    pub routes: usize,
    #[arg(long, default_value_t = 46)]
    pub communities: usize,
    #[arg(long, default_value_t = 5)]
    pub max_route_len: usize,
    /// Capacity reduction as FRACTION:PROB, repeatable [default: 0.2:0.3 0.4:0.2].
    #[arg(long = "reduction")]
    pub reductions: Vec<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { network, scenarios } => commands::validate(&network, scenarios.as_deref()),
        Command::Gen(args) => commands::gen(&args),
        Command::Solve { args, check } => commands::solve(&args, check),
        Command::Compare(args) => commands::compare(&args),
        Command::Sweep { args, deltas } => commands::sweep(&args, deltas),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            commands::exit_code(&err)
        }
    }
}
