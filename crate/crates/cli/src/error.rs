use std::path::Path;

use pivae::baselines::BaselineError;
use pivae::benchmark::BenchmarkError;
use pivae::formats::FormatError;
use pivae::inference::InferenceError;
use pivae::mcmc::McmcError;
use pivae::model::ModelError;
use pivae::priors::PriorError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("I/O: {0}")]
    Io(String),
}

impl CliError {
    /// Exit status: 2 usage or configuration, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// A missing input file is a usage error; anything else reading it is I/O.
    pub fn input(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Config(format!("{} does not exist", path.display()))
        } else {
            CliError::Io(format!("{}: {e}", path.display()))
        }
    }

    pub fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<PriorError> for CliError {
    fn from(e: PriorError) -> Self {
        match e {
            PriorError::Cholesky(_) | PriorError::RejectionBudget { .. } | PriorError::IntensityOverflow => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Autodiff(_) | ModelError::Diverged { .. } => CliError::Numeric(e.to_string()),
            ModelError::Io(_) => CliError::Io(e.to_string()),
            ModelError::Format(_) | ModelError::Version { .. } | ModelError::Truncated => CliError::Input(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<McmcError> for CliError {
    fn from(e: McmcError) -> Self {
        match e {
            McmcError::Config(_) | McmcError::TooFew { .. } => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Model(m) => m.into(),
            InferenceError::Mcmc(m) => m.into(),
            InferenceError::NonFinite { .. } | InferenceError::Diverged { .. } => CliError::Numeric(e.to_string()),
            InferenceError::Data(_) | InferenceError::Incompatible(_) => CliError::Input(e.to_string()),
            InferenceError::Config(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Cholesky(_) => CliError::Numeric(e.to_string()),
            BaselineError::Model(m) => m.into(),
            BaselineError::Mcmc(m) => m.into(),
            BaselineError::Inference(i) => i.into(),
            BaselineError::Kernel(k) => k.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<BenchmarkError> for CliError {
    fn from(e: BenchmarkError) -> Self {
        match e {
            BenchmarkError::Prior(e) => e.into(),
            BenchmarkError::Model(e) => e.into(),
            BenchmarkError::Inference(e) => e.into(),
            BenchmarkError::Baseline(e) => e.into(),
            BenchmarkError::Config(m) => CliError::Config(m),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(io) => CliError::Io(io.to_string()),
            FormatError::Dataset(d) => CliError::Input(d.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
