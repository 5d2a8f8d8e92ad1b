//! Run configuration shared by every subcommand except `gen`.
//!
//! Command-line flags override the file; the file overrides defaults.
//! Remote endpoint and key are read only from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semsentry_core::baselines::BaselineConfig;
use semsentry_core::monitor::{RemoteConfig, SamplerConfig};
use semsentry_core::ScenarioClass;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Remote,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub episodes: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub detector: Option<PathBuf>,
    /// Prompt template file, or `driving` / `manipulation` for the bundled ones.
    pub template: Option<String>,
    pub vocabulary: Option<PathBuf>,
    /// Rule table for the oracle backend.
    pub rules: Option<PathBuf>,
    /// Replay cache file.
    pub replay: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

/// Remote backend settings other than endpoint and key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSettings {
    pub model: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub prompt_field: String,
    pub response_pointer: String,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        let d = RemoteConfig::default();
        Self {
            model: d.model,
            timeout_s: d.timeout_s,
            max_retries: d.max_retries,
            backoff_ms: d.backoff_ms,
            prompt_field: d.prompt_field,
            response_pointer: d.response_pointer,
        }
    }
}

impl RemoteSettings {
    pub fn to_remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            model: self.model.clone(),
            timeout_s: self.timeout_s,
            max_retries: self.max_retries,
            backoff_ms: self.backoff_ms,
            prompt_field: self.prompt_field.clone(),
            response_pointer: self.response_pointer.clone(),
            ..RemoteConfig::default()
        }
        .with_env()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub backend: BackendKind,
    pub remote: RemoteSettings,
    pub sampler: SamplerConfig,
    pub baseline: BaselineConfig,
    /// Classes whose frames train and calibrate the baselines.
    pub nominal_classes: Vec<ScenarioClass>,
    pub score: String,
    pub quantile: f64,
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            backend: BackendKind::default(),
            remote: RemoteSettings::default(),
            sampler: SamplerConfig::default(),
            baseline: BaselineConfig::default(),
            nominal_classes: ScenarioClass::ALL.into_iter().filter(|c| c.is_nominal()).collect(),
            score: "gmm_nll".into(),
            quantile: 0.95,
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_input(path, "run config")?;
        let config: Self = toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(CliError::Usage(format!("quantile {} must lie in (0, 1)", self.quantile)));
        }
        self.sampler.validate().map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// Read a required input file, with a hint when it is missing.
pub fn read_input(path: &Path, what: &str) -> Result<String, CliError> {
    require_file(path, what)?;
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("reading {what} {}: {e}", path.display())))
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} {} not found; check the path or create it first", path.display())))
    }
}
