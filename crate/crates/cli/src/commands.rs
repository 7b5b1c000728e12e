use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use pivae::benchmark::run_benchmark;
use pivae::formats;
use pivae::inference::{generate, infer as run_infer, predict, InferConfig, PointEstimate};
use pivae::mcmc::Diagnostics;
use pivae::model::{read_model, train_prior, write_model};
use pivae::priors::build_prior_dataset;
use pivae::rng::stream;
use pivae::{NoiseModel, PiVaeModel};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::OutDir;

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::input(path, e))
}

fn resolved(path: &Option<PathBuf>) -> &Path {
    path.as_deref().expect("input paths are resolved before dispatch")
}

fn load_model(path: &Path) -> Result<PiVaeModel, CliError> {
    Ok(read_model(&mut open(path)?)?)
}

fn load_locations(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    Ok(formats::read_locations(open(path)?)?)
}

fn check_dims(model: &PiVaeModel, locations: &[Vec<f64>], what: &str) -> Result<(), CliError> {
    match locations.iter().find(|l| l.len() != model.input_dim()) {
        Some(l) => Err(CliError::Input(format!(
            "{what} have {} coordinates, the model expects {}",
            l.len(),
            model.input_dim()
        ))),
        None => Ok(()),
    }
}

pub fn make_prior(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let prior = config.section(&config.prior, "prior")?;
    let dataset = build_prior_dataset(prior, config.seed())?;
    let dir = OutDir::create(out, "make-prior", config)?;
    let path = dir.write_with("dataset.jsonl", |w| formats::write_dataset(&dataset, w))?;
    let sizes: Vec<usize> = dataset.draws().iter().map(|d| d.len()).collect();
    let (k_min, k_max) = (sizes.iter().min().copied().unwrap_or(0), sizes.iter().max().copied().unwrap_or(0));
    let k = if k_min == k_max { k_min.to_string() } else { format!("{k_min}..{k_max}") };
    println!(
        "N={} K={k} D={} channels={} -> {}",
        dataset.len(),
        dataset.input_dim(),
        dataset.channels().count(),
        path.display()
    );
    Ok(())
}

pub fn train(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let dataset = formats::read_dataset(open(resolved(&config.paths.dataset))?)?;
    let train = config.train.clone().unwrap_or_default();
    let outcome = train_prior(&dataset, &train)?;
    let dir = OutDir::create(out, "train", config)?;
    let model_path = dir.write_with("model.pivae", |w| write_model(&outcome.model, w))?;
    dir.write_json("train_report.json", &outcome.report)?;
    println!(
        "trained on {} functions for {} epochs: final loss {}, reconstruction mse {} -> {}",
        outcome.report.functions,
        outcome.report.epochs.len(),
        outcome.report.final_loss,
        outcome.report.reconstruction_mse,
        model_path.display()
    );
    Ok(())
}

pub fn sample(config: &ExperimentConfig, out: &Path, plot: bool) -> Result<(), CliError> {
    let model = load_model(resolved(&config.paths.model))?;
    let locations = load_locations(resolved(&config.paths.locations))?;
    check_dims(&model, &locations, "locations")?;
    let draws_wanted = config.sample.clone().unwrap_or_default().draws;
    let draws = (0..draws_wanted)
        .map(|i| generate(&model, &locations, &mut stream(config.seed(), i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = OutDir::create(out, "sample", config)?;
    let path = dir.write_with("draws.csv", |w| {
        formats::write_function_draws(&locations, &draws, model.input_dim(), model.channels(), w)
    })?;
    if plot && model.input_dim() == 1 {
        dir.write_with("draws.gp", |w| w.write_all(DRAWS_SCRIPT.as_bytes()))?;
    }
    println!("{draws_wanted} draws at {} locations -> {}", locations.len(), path.display());
    Ok(())
}

const DRAWS_SCRIPT: &str = "\
set datafile separator ','
set key off
set xlabel 's0'
set ylabel 'f(s)'
plot 'draws.csv' using 2:3:1 skip 1 with lines lc variable
";

const PREDICTION_SCRIPT: &str = "\
set datafile separator ','
set xlabel 's0'
set ylabel 'f(s)'
plot 'predictions.csv' using 1:4:6 skip 1 with filledcurves fs transparent solid 0.3 title '95% interval', \\
     '' using 1:2 skip 1 with lines lw 2 title 'posterior mean', \\
     'observations.csv' using 1:2 skip 1 with points pt 7 title 'observations'
";

#[derive(Serialize)]
struct InferReport<'a> {
    converged: bool,
    max_rhat: Option<f64>,
    min_ess_ratio: Option<f64>,
    warnings: &'a [String],
    noise: &'a NoiseModel,
    point_estimate: &'a Option<PointEstimate>,
    diagnostics: &'a Diagnostics,
    settings: &'a InferConfig,
}

pub fn infer(config: &ExperimentConfig, out: &Path, plot: bool) -> Result<(), CliError> {
    let model = load_model(resolved(&config.paths.model))?;
    let data = formats::read_observations(open(resolved(&config.paths.data))?)?;
    let locations = match &config.paths.locations {
        Some(path) => load_locations(path)?,
        None => data.locations.clone(),
    };
    check_dims(&model, &locations, "prediction locations")?;
    let noise = config.noise.clone().unwrap_or_default();
    let settings = config.inference.clone().unwrap_or_default();
    let posterior = run_infer(&model, &data, &noise, &settings)?;
    let mut predict_config = config.predict.clone().unwrap_or_default();
    if matches!(noise, NoiseModel::PoissonLgcp { .. }) {
        predict_config.noise_band = false;
    }
    let prediction = predict(&posterior, &locations, &predict_config)?;

    let dir = OutDir::create(out, "infer", config)?;
    dir.write_with("chains.csv", |w| formats::write_chains(&posterior.chains, w))?;
    let pred_path = dir.write_with("predictions.csv", |w| formats::write_predictions(&prediction, w))?;
    dir.write_json(
        "diagnostics.json",
        &InferReport {
            converged: posterior.converged(),
            max_rhat: posterior.diagnostics.max_rhat,
            min_ess_ratio: posterior.diagnostics.min_ess_ratio,
            warnings: posterior.warnings(),
            noise: &noise,
            point_estimate: &posterior.point,
            diagnostics: &posterior.diagnostics,
            settings: &settings,
        },
    )?;
    if plot && model.input_dim() == 1 && model.channels() == 1 {
        dir.write_with("observations.csv", |w| formats::write_observations(&data, w))?;
        dir.write_with("predictions.gp", |w| w.write_all(PREDICTION_SCRIPT.as_bytes()))?;
    }
    for warning in posterior.warnings() {
        eprintln!("warning: {warning}");
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} observations, {} chains: max R-hat {}, min ESS/N {} -> {}",
        data.len(),
        posterior.chains.draws.len(),
        fmt(posterior.diagnostics.max_rhat),
        fmt(posterior.diagnostics.min_ess_ratio),
        pred_path.display()
    );
    Ok(())
}

pub fn benchmark(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let bench = config.section(&config.benchmark, "benchmark")?;
    let model = config.paths.model.as_deref().map(load_model).transpose()?;
    let report = run_benchmark(bench, model.as_ref())?;
    let dir = OutDir::create(out, "benchmark", config)?;
    let path = dir.write_json("metrics.json", &report)?;
    for m in &report.methods {
        println!(
            "{:<10} train mse {:.4}  test mse {:.4}  test nll {:.4}",
            m.name, m.train_mse, m.test_mse, m.test_nll
        );
    }
    println!("-> {}", path.display());
    Ok(())
}
