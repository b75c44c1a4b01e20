//! Experiment configuration: TOML (or JSON) with every key checked.

use std::path::{Path, PathBuf};

use famus_core::datagen::{inject_symmetric_noise, make_longtail, read_csv, split, BlobTask, SplitSpec};
use famus_core::{Activation, Datasets, GatingStrategy, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const NOISE_CONVENTION: &str =
    "symmetric noise resamples a selected label uniformly over all classes, true class included";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        #[serde(default)]
        noise_rate: f64,
        #[serde(default)]
        imbalance_factor: Option<f64>,
        split: SplitSpec,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        noise_rate: f64,
        #[serde(default)]
        imbalance_factor: Option<f64>,
        split: SplitSpec,
    },
}

impl DatasetSpec {
    pub fn build(&self, seed: u64, base_dir: &Path) -> Result<Datasets, CliError> {
        match self {
            DatasetSpec::Blobs {
                classes,
                per_class,
                dim,
                spread,
                noise_rate,
                imbalance_factor,
                split,
            } => Ok(BlobTask {
                classes: *classes,
                per_class: *per_class,
                dim: *dim,
                spread: *spread,
                noise_rate: *noise_rate,
                imbalance_factor: *imbalance_factor,
                split: *split,
            }
            .build(seed)?),
            DatasetSpec::Csv {
                path,
                noise_rate,
                imbalance_factor,
                split: spec,
            } => {
                let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let mut ds = read_csv(&path).map_err(|e| CliError::Config(format!("dataset {}: {e}", path.display())))?;
                if let Some(f) = imbalance_factor {
                    ds = make_longtail(&ds, *f, seed)?;
                }
                if !(0.0..=1.0).contains(noise_rate) {
                    return Err(CliError::Config(format!("noise rate {noise_rate} outside [0, 1]")));
                }
                let mut splits = split(&ds, spec, seed)?;
                splits.train = inject_symmetric_noise(&splits.train, *noise_rate, seed)?;
                Ok(splits)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Input width, hidden widths, class count.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

/// Bounds of the tiny instances used by `gradcheck`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSpec {
    pub instances: usize,
    pub widths: Vec<usize>,
    pub meta_hidden: usize,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec {
            instances: 10,
            widths: vec![4, 6, 5, 3],
            meta_hidden: 16,
            n: 2,
            m: 2,
            alpha: 0.2,
            tolerance: 1e-4,
        }
    }
}

pub const GRADCHECK_MAX_LAYERS: usize = 3;
pub const GRADCHECK_MAX_WIDTH: usize = 8;
pub const GRADCHECK_MAX_THETA: usize = 500;
pub const GRADCHECK_MAX_BATCH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Strategies to run, in order.
    #[serde(default = "default_strategies")]
    pub strategies: Vec<GatingStrategy>,
    pub dataset: Option<DatasetSpec>,
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub gradcheck: GradcheckSpec,
}

fn default_strategies() -> Vec<GatingStrategy> {
    vec![GatingStrategy::AllLayers]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: None,
            strategies: default_strategies(),
            dataset: None,
            network: None,
            train: TrainConfig::default(),
            gradcheck: GradcheckSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    /// Applies command-line overrides and checks everything a run needs.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if out.is_some() {
            self.out = out;
        }
        self.train.seed = self.seed;
        self.train.validate()?;
        Ok(self)
    }

    pub fn require_training(&self) -> Result<(&DatasetSpec, &NetworkSpec), CliError> {
        let dataset = self.dataset.as_ref().ok_or_else(|| CliError::Config("missing [dataset] section".into()))?;
        let network = self.network.as_ref().ok_or_else(|| CliError::Config("missing [network] section".into()))?;
        if network.widths.len() < 2 {
            return Err(CliError::Config("network.widths needs an input and an output width".into()));
        }
        if self.strategies.is_empty() {
            return Err(CliError::Config("strategies must list at least one strategy".into()));
        }
        for s in &self.strategies {
            s.validate(network.widths.len() - 1)?;
        }
        Ok((dataset, network))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))
    }

    /// SHA-256 of the resolved TOML form.
    pub fn digest(&self) -> Result<String, CliError> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}
