//! The experiment file: one TOML document describing a whole run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pivae::benchmark::BenchmarkConfig;
use pivae::inference::{InferConfig, NoiseModel, PredictConfig};
use pivae::priors::PriorConfig;
use pivae::TrainConfig;

use crate::error::CliError;

/// Input and output file names. Relative inputs resolve against the config
/// file's directory; outputs always go under `--out`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub locations: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub draws: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { draws: 10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; when set it replaces every seed in the sections below.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub inference: Option<InferConfig>,
    #[serde(default)]
    pub predict: Option<PredictConfig>,
    #[serde(default)]
    pub sample: Option<SampleConfig>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        let de = toml::Deserializer::new(&text);
        let mut config: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("{}: field `{}`: {}", path.display(), e.path(), e.inner().message())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// Pushes the root seed (the flag wins over the file) into every section.
    pub fn apply_seed(&mut self, flag: Option<u64>) {
        let Some(seed) = flag.or(self.seed) else { return };
        self.seed = Some(seed);
        if let Some(t) = &mut self.train {
            t.seed = seed;
        }
        if let Some(i) = &mut self.inference {
            i.hmc.seed = seed;
            i.optimize.seed = seed;
        }
        if let Some(b) = &mut self.benchmark {
            b.field.seed = seed;
            b.split_seed = seed;
            b.prior_seed = seed;
            b.train.seed = seed;
            match &mut b.inference {
                pivae::benchmark::BenchInference::Mcmc { infer } => {
                    infer.hmc.seed = seed;
                    infer.optimize.seed = seed;
                }
                pivae::benchmark::BenchInference::Optimize { optimize } => optimize.seed = seed,
            }
            b.gp.optimize.seed = seed;
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn section<'a, T>(&'a self, value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] section")))
    }

    /// A path from a flag, or else from `[paths]` resolved against the config file.
    pub fn input(&self, flag: &Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
        match (flag, from_config) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(p)) => Ok(self.base_dir.join(p)),
            (None, None) => Err(CliError::Config(format!("no {name} given: pass --{name} or set paths.{name}"))),
        }
    }
}
