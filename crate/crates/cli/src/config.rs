//! `lipogate.toml`. Every section and key is optional; missing keys take
//! the defaults below, unknown keys are an error.

use anyhow::{Context, Result};
use lipogate::dataset::synth::SynthConfig;
use lipogate::orchestrator::OrchestratorConfig;
use lipogate::surrogate::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub train_n: usize,
    /// Share of the training half held back for checkpoint selection.
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            train_n: 800,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibraryConfig {
    pub seed: u64,
    pub size: usize,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self { seed: 11, size: 10_024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    pub store: PathBuf,
    /// Environment variable holding the static token required on POST.
    /// When the variable is unset the service accepts unauthenticated
    /// verdicts.
    pub token_env: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            store: PathBuf::from("lipogate-store"),
            token_env: "LIPOGATE_SERVE_TOKEN".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub library: LibraryConfig,
    pub train: TrainConfig,
    pub orchestrator: OrchestratorConfig,
    pub serve: ServeConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}
