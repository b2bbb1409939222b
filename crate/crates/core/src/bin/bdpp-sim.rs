use std::path::PathBuf;
use std::process::ExitCode;

use bdpp_core::runner::{self, Overrides};
use bdpp_core::scenario::{Algorithm, CValue, ScenarioConfig};
use bdpp_core::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "bdpp-sim",
    version,
    about = "Distributed constraint-coupled optimization runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON scenario file
    #[arg(long)]
    config: PathBuf,
    /// Seed for the random initial point
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record every k-th iteration
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single run of the configured algorithm
    Run(Common),
    /// B-DPP runs over several buffer constants
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma separated, e.g. 0.05,0.27,1,3,c0
        #[arg(long, value_delimiter = ',')]
        c_values: Option<Vec<String>>,
    },
    /// Several algorithms on one instance
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma separated subset of bdpp,dpp,dual_subgrad
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<String>>,
    },
    /// Theoretical constants for the configured instance
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        c: Option<f64>,
        /// Override for sigma (defaults to delta)
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Check B-connectivity and mixing weights
    ValidateSchedule {
        #[command(flatten)]
        common: Common,
        /// Agent count when the config has no usable problem
        #[arg(long)]
        n_agents: Option<usize>,
    },
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    Overrides {
        seed: common.seed,
        horizon: common.horizon,
        out: common.out.clone(),
        stride: common.stride,
    }
    .apply(&mut cfg);
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(common) => runner::cmd_run(&load(&common)?),
        Command::Sweep { common, c_values } => {
            let cfg = load(&common)?;
            let values = match c_values {
                Some(v) => v
                    .iter()
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse())
                    .collect::<Result<Vec<CValue>>>()?,
                None => cfg.params.c_values.clone().unwrap_or_default(),
            };
            runner::cmd_sweep(&cfg, &values)
        }
        Command::Compare { common, algorithms } => {
            let cfg = load(&common)?;
            let algs = match algorithms {
                Some(v) => v
                    .iter()
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse())
                    .collect::<Result<Vec<Algorithm>>>()?,
                None => cfg.params.algorithms.clone().unwrap_or_default(),
            };
            runner::cmd_compare(&cfg, &algs)
        }
        Command::Bounds { common, c, sigma } => {
            runner::cmd_bounds(&load(&common)?, c, sigma).map(|_| ())
        }
        Command::ValidateSchedule { common, n_agents } => {
            runner::cmd_validate_schedule(&load(&common)?, n_agents).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            let code = runner::exit_code(&e);
            ExitCode::from(code as u8)
        }
    }
}
