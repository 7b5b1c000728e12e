//! `pivae`: build prior corpora, train the autoencoder, sample from it,
//! condition it on data and compare it against an exact GP.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pivae", version, about = "Prior-encoding VAE pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Experiment file (TOML). Sections a command does not need may be left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw the training corpus from the configured prior.
    MakePrior,
    /// Fit the autoencoder to a corpus.
    Train {
        /// Corpus written by make-prior (default: `paths.dataset`).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Draw functions from a trained model at given locations.
    Sample {
        /// Trained model file (default: `paths.model`).
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV of locations, one row per point (default: `paths.locations`).
        #[arg(long)]
        locations: Option<PathBuf>,
        /// Number of functions to draw (default: `sample.draws`).
        #[arg(long)]
        draws: Option<usize>,
        /// Also write a gnuplot script for the draws.
        #[arg(long)]
        plot: bool,
    },
    /// Condition a trained model on observations with HMC.
    Infer {
        /// Trained model file (default: `paths.model`).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Observations CSV (default: `paths.data`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Prediction locations (default: the observed locations).
        #[arg(long)]
        locations: Option<PathBuf>,
        /// Also write a gnuplot script for the predictions.
        #[arg(long)]
        plot: bool,
    },
    /// Compare the model against an exact GP on a simulated field.
    Benchmark {
        /// Use this trained prior instead of training one from `[benchmark]`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut config = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    config.apply_seed(cli.global.seed);
    let out = &cli.global.out;
    match cli.command {
        Command::MakePrior => commands::make_prior(&config, out),
        Command::Train { dataset } => {
            config.paths.dataset = Some(config.input(&dataset, &config.paths.dataset, "dataset")?);
            commands::train(&config, out)
        }
        Command::Sample { model, locations, draws, plot } => {
            config.paths.model = Some(config.input(&model, &config.paths.model, "model")?);
            config.paths.locations = Some(config.input(&locations, &config.paths.locations, "locations")?);
            if let Some(draws) = draws {
                config.sample.get_or_insert_with(Default::default).draws = draws;
            }
            commands::sample(&config, out, plot)
        }
        Command::Infer { model, data, locations, plot } => {
            config.paths.model = Some(config.input(&model, &config.paths.model, "model")?);
            config.paths.data = Some(config.input(&data, &config.paths.data, "data")?);
            if locations.is_some() || config.paths.locations.is_some() {
                config.paths.locations = Some(config.input(&locations, &config.paths.locations, "locations")?);
            }
            commands::infer(&config, out, plot)
        }
        Command::Benchmark { model } => {
            if model.is_some() || config.paths.model.is_some() {
                config.paths.model = Some(config.input(&model, &config.paths.model, "model")?);
            }
            commands::benchmark(&config, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
