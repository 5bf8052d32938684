//! The resolved run configuration and its content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use volmark_core::autodiff::CheckpointPolicy;
use volmark_core::detector::{DetectorConfig, TrainConfig};
use volmark_core::phantom::PhantomSpec;
use volmark_core::ssl::RefineConfig;

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_train: 50, n_test: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub max_threshold_mm: f64,
    pub threshold_step_mm: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_threshold_mm: 30.0, threshold_step_mm: 0.5 }
    }
}

/// Gradient checkpointing mode for training.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Gcp {
    #[default]
    Off,
    BlockBoundary,
    EveryK {
        k: usize,
    },
}

impl Gcp {
    pub fn policy(&self) -> Option<CheckpointPolicy> {
        match self {
            Gcp::Off => None,
            Gcp::BlockBoundary => Some(CheckpointPolicy::BlockBoundary),
            Gcp::EveryK { k } => Some(CheckpointPolicy::EveryK { k: *k }),
        }
    }
}

impl std::str::FromStr for Gcp {
    type Err = String;

    /// `off`, `block_boundary` or `every_k:<k>`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(Gcp::Off),
            "block_boundary" => Ok(Gcp::BlockBoundary),
            _ => match s.strip_prefix("every_k:").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => Ok(Gcp::EveryK { k }),
                _ => Err(format!("expected off, block_boundary or every_k:<k>, got '{s}'")),
            },
        }
    }
}

/// Everything a run depends on apart from its input files and paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: u32,
    pub phantom: PhantomSpec,
    pub dataset: DatasetConfig,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub gcp: Gcp,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            phantom: PhantomSpec::default(),
            dataset: DatasetConfig::default(),
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            gcp: Gcp::Off,
            refine: RefineConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        };
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Usage(format!("unsupported config version {}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
        self.phantom.validate().map_err(|e| usage(&e))?;
        self.detector.validate().map_err(|e| usage(&e))?;
        self.train.validate().map_err(|e| usage(&e))?;
        self.refine.validate().map_err(|e| usage(&e))?;
        if self.dataset.n_train == 0 || self.dataset.n_test == 0 {
            return Err(CliError::Usage("dataset needs at least one train and one test case".into()));
        }
        if !(self.eval.threshold_step_mm > 0.0 && self.eval.max_threshold_mm > self.eval.threshold_step_mm) {
            return Err(CliError::Usage("eval grid needs step > 0 and max > step".into()));
        }
        if let Gcp::EveryK { k: 0 } = self.gcp {
            return Err(CliError::Usage("every_k needs k >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Version and hash, as embedded in every artifact.
    pub fn stamp(&self) -> ConfigStamp {
        ConfigStamp { config_version: self.version, config_hash: self.hash() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigStamp {
    pub config_version: u32,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_keeps_the_hash() {
        let mut cfg = RunConfig::default();
        cfg.train.epochs = 3;
        cfg.gcp = Gcp::EveryK { k: 4 };
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg: RunConfig = toml::from_str("[train]\nepochs = 2\n").unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.refine, RefineConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn gcp_flag_parsing() {
        assert_eq!("every_k:3".parse::<Gcp>().unwrap(), Gcp::EveryK { k: 3 });
        assert_eq!("block_boundary".parse::<Gcp>().unwrap(), Gcp::BlockBoundary);
        assert!("every_k:0".parse::<Gcp>().is_err());
        assert!("sometimes".parse::<Gcp>().is_err());
    }
}
