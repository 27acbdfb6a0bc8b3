//! Effective configuration of every command, and its TOML round trip.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::MANIFEST_FILE;
use crate::model::{ModelConfig, TrainOptions, TTA_SCALES};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const SEED_ENV: &str = "SCD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetPaths {
    pub root: PathBuf,
    /// Defaults to `manifest.json` under `root`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Filled from the manifest when training starts.
    pub class_names: Vec<String>,
}

impl Default for DatasetPaths {
    fn default() -> Self {
        Self { root: PathBuf::from("data"), manifest: None, class_names: Vec::new() }
    }
}

impl DatasetPaths {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.root.join(MANIFEST_FILE))
    }
}

/// Test-time augmentation: probabilities averaged over scales and optionally
/// horizontal flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtaConfig {
    pub scales: Vec<f64>,
    pub flip: bool,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self { scales: vec![1.0], flip: false }
    }
}

impl TtaConfig {
    /// `none`, `ms`, `flip` or `ms,flip`.
    pub fn parse(modes: &str) -> Result<Self> {
        let mut tta = Self::default();
        for tok in modes.split(',').map(str::trim) {
            match tok {
                "none" if modes.trim() == "none" => {}
                "ms" => tta.scales = TTA_SCALES.to_vec(),
                "flip" => tta.flip = true,
                _ => return Err(Error::Config(format!("unknown tta mode {tok:?}; use none, ms, flip or ms,flip"))),
            }
        }
        Ok(tta)
    }
}

/// Everything a training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `model.seed` and `train.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub dataset: DatasetPaths,
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub tta: TtaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetPaths::default(),
            model: ModelConfig::toy(4),
            train: TrainOptions::toy(),
            tta: TtaConfig::default(),
        }
    }
}

impl RunConfig {
    /// Pin the seed (flag, then file, then environment, then 0) and copy it
    /// into the model and training options.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let seed = match flag.or(self.seed) {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        self.seed = Some(seed);
        self.model.seed = seed;
        self.train.seed = seed;
        Ok(seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.tta.scales.is_empty() || self.tta.scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("tta.scales must be a nonempty list of positive numbers".into()));
        }
        Ok(())
    }
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Write `value` as `config.toml` into `dir`, creating it.
pub fn write_effective<T: Serialize>(dir: &Path, value: &T) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_FILE);
    let text = toml::to_string(value).map_err(|e| Error::Config(format!("config does not serialize: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
