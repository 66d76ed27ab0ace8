//! The run configuration: one TOML file with optional `preset`, `[paths]`,
//! `[model]`, `[train]` and `[synth]` sections, merged with command-line overrides.
//! The resolved result is written to the run directory as `config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use apnet_core::data::SynthSpec;
use apnet_core::train::{Preset, TrainConfig};
use apnet_core::{ApnetConfig, Error};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub paths: Paths,
    pub model: ApnetConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Training manifest.
    pub manifest: Option<PathBuf>,
    /// Validation manifest.
    pub val_manifest: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
    }

    pub fn preset(&self) -> Result<Option<Preset>> {
        Ok(self.preset.as_deref().map(str::parse).transpose()?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Write the resolved configuration to `dir/config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig {
            preset: Some("apnet2+DA".into()),
            ..Default::default()
        };
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: RunConfig = toml::from_str("[train]\nmax_iter = 7\n").unwrap();
        assert_eq!(c.train.max_iter, 7);
        assert_eq!(c.model, ApnetConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nlearning_rate = 1\n").is_err());
    }
}
