//! `entroprog` command-line driver.

mod commands;
mod fail;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fail::{CliError, CliResult, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "entroprog", version, about = "Entropy-driven prognostics on gridded sensor data")]
struct Cli {
    /// TOML run configuration; absent keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root. Each command writes into its own subdirectory.
    #[arg(long, global = true, env = "ENTROPROG_OUT", default_value = "entroprog-out")]
    out: PathBuf,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "snn")]
    Snn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the labelled transition dataset.
    Generate,
    /// Extract per-step entropy features for every segment.
    Features {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train one model stage.
    Train {
        #[arg(long, value_enum)]
        stage: Stage,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Overrides the stage's epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue stage 1 from its checkpoint and history.
        #[arg(long)]
        resume: bool,
    },
    /// Alerts, anomaly scores, risk scores and grid snapshots.
    Predict {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Alert horizon in steps.
        #[arg(long)]
        horizon: Option<usize>,
        /// Segments to predict; defaults to the configured evaluation split.
        #[arg(long, value_enum)]
        part: Option<PartArg>,
        /// Extra steps to export grid snapshots at, comma separated.
        #[arg(long, value_delimiter = ',')]
        snapshot_steps: Vec<usize>,
    },
    /// Score predictions against the dataset labels.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Latency and unit count for a deployment.
    Capacity {
        #[arg(long)]
        t_single_ms: Option<f64>,
        #[arg(long)]
        machines: Option<usize>,
        #[arg(long)]
        cores: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let ctx = commands::Context::load(cli.config.as_deref(), cli.seed, cli.out.clone())?;
    let threads = if cli.deterministic { 1 } else { cli.threads };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Features { dataset } => commands::features(&ctx, dataset),
        Command::Train {
            stage,
            dataset,
            features,
            epochs,
            resume,
        } => commands::train(&ctx, stage, dataset, features, epochs, resume),
        Command::Predict {
            dataset,
            features,
            models,
            horizon,
            part,
            snapshot_steps,
        } => commands::predict(&ctx, dataset, features, models, horizon, part, &snapshot_steps),
        Command::Evaluate { dataset, predictions } => commands::evaluate(&ctx, dataset, predictions),
        Command::Capacity {
            t_single_ms,
            machines,
            cores,
            n_max,
        } => commands::capacity(&ctx, t_single_ms, machines, cores, n_max),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let err = CliError {
                error: "usage".into(),
                message: first,
                exit_code: EXIT_VALIDATION,
            };
            eprintln!("{}", err.to_line());
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
