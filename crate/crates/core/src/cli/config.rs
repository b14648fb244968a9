use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{bundled_data_dir, EnvConfig};
use crate::eval::EvalOptions;
use crate::ppo::{PpoConfig, Preset};
use crate::pso::PsoConfig;

/// Everything a command needs besides its own flags. Loaded from TOML,
/// overridden by flags, and written to the output directory before work
/// starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    /// Directory of `.dat` files for the reset pool and evaluation.
    pub data_dir: PathBuf,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub pso: PsoConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn with_preset(preset: Preset) -> Self {
        Self {
            seed: 0,
            preset,
            data_dir: bundled_data_dir(),
            env: EnvConfig::default(),
            ppo: PpoConfig::preset(preset),
            pso: PsoConfig::default(),
            eval: EvalOptions::default(),
        }
    }

    /// Defaults for the preset, with whatever the file sets layered on top.
    /// The `preset` argument beats a `preset` key in the file.
    pub fn load(path: Option<&Path>, preset: Option<Preset>) -> Result<Self, String> {
        let file: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                text.parse().map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => toml::Table::new(),
        };
        let from_file = file
            .get("preset")
            .and_then(|v| v.as_str())
            .map(|s| s.parse::<Preset>())
            .transpose()?;
        let preset = preset.or(from_file).unwrap_or(Preset::FromScratch);
        let mut base = toml::Table::try_from(Self::with_preset(preset)).map_err(|e| e.to_string())?;
        merge(&mut base, file);
        base.insert("preset".into(), toml::Value::try_from(preset).map_err(|e| e.to_string())?);
        let cfg: Self = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| e.to_string())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
