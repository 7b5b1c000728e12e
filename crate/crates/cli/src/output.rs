//! Writing artifacts. Every file gets the run's provenance: JSON reports carry
//! it inline under `"run"`, other formats get a `<name>.meta.json` sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct RunInfo<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub format_version: u32,
    pub command: &'static str,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
}

pub struct OutDir<'a> {
    dir: PathBuf,
    run: RunInfo<'a>,
}

impl<'a> OutDir<'a> {
    pub fn create(dir: &Path, command: &'static str, config: &'a ExperimentConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        let run = RunInfo {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            format_version: pivae::FORMAT_VERSION,
            command,
            seed: config.seed(),
            config,
        };
        Ok(Self { dir: dir.to_path_buf(), run })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a non-JSON artifact through `body`, then its sidecar.
    pub fn write_with<E>(&self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>) -> Result<PathBuf, CliError>
    where
        CliError: From<E>,
    {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::output(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| CliError::output(&path, e))?;
        self.write_json(&format!("{name}.meta.json"), &serde_json::json!({}))?;
        Ok(path)
    }

    /// Writes `{"run": ..., <fields of report>}`.
    pub fn write_json(&self, name: &str, report: &impl Serialize) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut value = serde_json::to_value(report).map_err(|e| CliError::Numeric(e.to_string()))?;
        let run = serde_json::to_value(&self.run).map_err(|e| CliError::Numeric(e.to_string()))?;
        match &mut value {
            serde_json::Value::Object(map) => {
                map.insert("run".into(), run);
            }
            other => {
                *other = serde_json::json!({ "run": run, "result": other.take() });
            }
        }
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Numeric(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }
}
