use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cmpglm_cli::{commands, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "cmpglm", version, about = "Bayesian CMP_mu count regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `sampler.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// MLE, posterior sampling, summaries and plot data.
    Fit(Common),
    /// Posterior-predictive pmf at `[predict].values`.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Chain CSV written by `fit`.
        #[arg(long)]
        chain: PathBuf,
    },
    /// Interval coverage study over simulated replicates.
    Coverage {
        #[command(flatten)]
        common: Common,
        /// Worker threads for replicates.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summaries and plot data for an existing chain CSV.
    Diagnose {
        #[arg(long)]
        chain: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        /// Credible levels.
        #[arg(long, value_delimiter = ',', default_value = "0.95")]
        levels: Vec<f64>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.sampler.seed = Some(seed);
    }
    if let Some(dir) = &common.output {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Fit(common) => commands::cmd_fit(&load(&common)?),
        Command::Predict { common, chain } => commands::cmd_predict(&load(&common)?, &chain),
        Command::Coverage { common, threads } => commands::cmd_coverage(&load(&common)?, threads),
        Command::Diagnose { chain, output, levels } => {
            if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
                return Err(CliError::Config("levels must lie in (0, 1)".into()));
            }
            commands::cmd_diagnose(&chain, &levels, &output)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
