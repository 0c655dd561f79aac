//! Experiment configuration: one TOML file per run, parsed strictly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tcgan::data::{generate_synthetic, load_dsprites, load_idx, FactorDataset, SyntheticSpec};
use tcgan::latent::LatentSpec;
use tcgan::metrics::MetricSettings;
use tcgan::nets::ArchConfig;
use tcgan::trainer::TrainConfig;

use crate::error::{CliError, Result};

/// Name of the fully materialized config written into every run directory.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    /// A dSprites-format `.npz` archive.
    Dsprites { path: PathBuf },
    /// MNIST-family IDX image and label files.
    Mnist { images: PathBuf, labels: PathBuf },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetConfig {
    pub fn load(&self) -> Result<FactorDataset> {
        let ds = match self {
            DatasetConfig::Synthetic(spec) => generate_synthetic(spec, 0)?,
            DatasetConfig::Dsprites { path } => load_dsprites(path)?,
            DatasetConfig::Mnist { images, labels } => load_idx(images, labels)?,
        };
        Ok(ds)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetConfig::Synthetic(_) => {}
            DatasetConfig::Dsprites { path } => fix(path),
            DatasetConfig::Mnist { images, labels } => {
                fix(images);
                fix(labels);
            }
        }
    }
}

fn default_latent() -> LatentSpec {
    LatentSpec::dsprites()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_latent")]
    pub latent: LatentSpec,
    /// Optimizer settings and the loss weights `lambda_mi`, `beta_tc`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub metrics: MetricSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative dataset and output paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.metrics.validate()?;
        self.latent.validate()?;
        if let DatasetConfig::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything except the seed and the output directory: runs
    /// sharing it differ only by seed.
    pub fn group_hash(&self) -> String {
        let mut c = self.clone();
        c.train.seed = 0;
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}
