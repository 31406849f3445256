//! The optional `--config` JSON file. Every section is strict: unknown keys
//! are rejected so typos fail loudly instead of silently falling back to
//! defaults. Command-line flags override config values, which override the
//! built-in defaults.

use anyhow::{Context, Result};
use psla_core::dpp::InstanceGenConfig;
use psla_core::pdn::{FrequencyBand, MeshPdnSpec};
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub mesh: Option<MeshPdnSpec>,
    pub band: Option<FrequencyBand>,
    pub instance_gen: Option<InstanceGenConfig>,
    pub shaping: Option<ShapingDefaults>,
    pub rl: Option<RlDefaults>,
    pub bench: Option<BenchDefaults>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapingDefaults {
    pub alpha: f64,
    pub lambda: f64,
    pub beta_init: f64,
    pub beta_min: f64,
}

impl Default for ShapingDefaults {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            lambda: 0.5,
            beta_init: 1.0,
            beta_min: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlDefaults {
    pub episodes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub eval_interval: usize,
    pub eval_rollouts: usize,
}

impl Default for RlDefaults {
    fn default() -> Self {
        Self {
            episodes: 200,
            batch_size: 16,
            learning_rate: 0.3,
            gamma: 1.0,
            eval_interval: 10,
            eval_rollouts: 64,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchDefaults {
    pub d: usize,
    pub reps: usize,
}

impl Default for BenchDefaults {
    fn default() -> Self {
        Self { d: 64, reps: 9 }
    }
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}
