use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedcomp_core::cli;
use fedcomp_core::fedsim::Algo;

#[derive(Parser)]
#[command(name = "fedcomp", version, about = "Federated compositional gradient simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write run.csv, summary.json and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_algo)]
        algo: Option<Algo>,
        #[arg(long)]
        out: PathBuf,
        /// Refuse to run unless every theorem-regime constraint holds.
        #[arg(long)]
        enforce_theorem: bool,
    },
    /// Print the theorem-regime constraint report.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the closed-form gradient with finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Fit the convergence-rate exponent over several horizons.
    Rate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fit an exact T^(-1/3) sequence instead of running simulations.
        #[arg(long)]
        self_test: bool,
    },
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    Algo::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match Args::parse().command {
        Command::Run { config, seed, algo, out, enforce_theorem } => {
            cli::cmd_run(&config, seed, algo, &out, enforce_theorem)
        }
        Command::Validate { config } => cli::cmd_validate(&config),
        Command::Gradcheck { config, points } => cli::cmd_gradcheck(&config, points),
        Command::Rate { config, horizons, seeds, out, self_test } => {
            cli::cmd_rate(config.as_deref(), &horizons, &seeds, out.as_deref(), self_test)
        }
    };
    ExitCode::from(code as u8)
}
