use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use spectral_refiner::eval::EvalOptions;
use spectral_refiner::surrogate::DEFAULT_RIDGE;
use spectral_refiner::{FeatureSet, KsParams, NsParams, ScheduleConfig};

pub const SCHEMA: &str = include_str!("../config.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pde {
    #[default]
    Ks,
    Ns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub num_trajectories: usize,
    pub first_seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_trajectories: 20,
            first_seed: 0,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub pairs_per_transition: usize,
    pub ridge: f64,
    pub features: FeatureSet,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            pairs_per_transition: 8,
            ridge: DEFAULT_RIDGE,
            features: FeatureSet::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleDumpConfig {
    /// Frequency scalings of the representative modes in the schedule CSV.
    pub lambdas: Vec<f64>,
}

impl Default for ScheduleDumpConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.25, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Trajectory directory, relative to the output directory.
    pub data_dir: String,
    /// Model file, relative to the output directory.
    pub model: String,
    pub rollout_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            model: "model.json".into(),
            rollout_dir: "rollouts".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub pde: Pde,
    /// Run seed for training-pair sampling and refinement noise.
    pub seed: u64,
    pub ks: KsParams,
    pub ns: NsParams,
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
    pub fit: FitConfig,
    pub eval: EvalOptions,
    pub schedule_dump: ScheduleDumpConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Config file (or defaults) with `KEY=VALUE` overrides applied on top.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        if let Some(s) = seed {
            apply_override(&mut value, &format!("seed={s}"))?;
        }
        serde_json::from_value(value).map_err(|e| ConfigError(e.to_string()).into())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

/// Sets a dotted `KEY` to `VALUE`, parsed as JSON with a plain-string fallback.
pub fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!(ConfigError(format!("override {item:?} is not KEY=VALUE")));
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            bail!(ConfigError(format!("override {key:?}: {part:?} is not inside an object")));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    bail!(ConfigError(format!("empty override key in {item:?}")))
}
