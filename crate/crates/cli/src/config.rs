//! Experiment configuration files (TOML) and dataset sources.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use noisec::data::{
    generate_synthetic, import_packed_rgb32, parse_dataset, LabeledDataset, Split, SyntheticSpec,
};
use noisec::eval::{config_hash, EvalConfig};

use crate::error::CliError;

fn default_side() -> usize {
    16
}

fn default_noise() -> f32 {
    0.01
}

/// Where the train and test splits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    /// Seeded parametric patterns, generated on demand.
    Synthetic {
        classes: usize,
        train_samples: usize,
        test_samples: usize,
        #[serde(default = "default_side")]
        height: usize,
        #[serde(default = "default_side")]
        width: usize,
        #[serde(default = "default_noise")]
        noise: f32,
        seed: u64,
    },
    /// Dataset files in the native format.
    Files { train: PathBuf, test: PathBuf },
    /// Packed 3073-byte records (label byte, then 32x32 RGB planes).
    Packed {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; `--out` overrides it.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub experiment: EvalConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.experiment.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.data {
            DataConfig::Files { train, test } => {
                resolve(train);
                resolve(test);
            }
            DataConfig::Packed { train, test } => {
                train.iter_mut().chain(test.iter_mut()).for_each(resolve)
            }
            DataConfig::Synthetic { .. } => {}
        }
        if let Some(out) = &mut cfg.out_dir {
            resolve(out);
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> [u8; 32] {
        config_hash(self)
    }

    /// Both splits.
    pub fn load_data(&self) -> Result<(LabeledDataset, LabeledDataset), CliError> {
        match &self.data {
            DataConfig::Synthetic {
                classes,
                train_samples,
                test_samples,
                height,
                width,
                noise,
                seed,
            } => {
                let spec = |samples: usize| SyntheticSpec {
                    classes: *classes,
                    samples,
                    height: *height,
                    width: *width,
                    noise: *noise,
                };
                let train = generate_synthetic(&spec(*train_samples), Split::Train, *seed)?;
                let test =
                    generate_synthetic(&spec(*test_samples), Split::Test, seed.wrapping_add(1))?;
                Ok((train, test))
            }
            DataConfig::Files { train, test } => Ok((read_native(train)?, read_native(test)?)),
            DataConfig::Packed { train, test } => Ok((
                read_packed(train, Split::Train)?,
                read_packed(test, Split::Test)?,
            )),
        }
    }
}

fn read_native(path: &Path) -> Result<LabeledDataset, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::missing(path, e))?;
    Ok(parse_dataset(&bytes)
        .map_err(|e| CliError::missing(path, e))?
        .0)
}

fn read_packed(paths: &[PathBuf], split: Split) -> Result<LabeledDataset, CliError> {
    let mut bytes = Vec::new();
    for p in paths {
        bytes.extend(fs::read(p).map_err(|e| CliError::missing(p, e))?);
    }
    import_packed_rgb32(&bytes, split)
        .map_err(|e| CliError::missing(paths.first().cloned().unwrap_or_default(), e))
}
