//! Run configuration: one JSON document covering the search space, the
//! generator shape, training/search settings, and the dataset source.
//! Unknown keys are rejected so a typo cannot silently fall back to a
//! default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use smash_core::arch::SearchSpaceConfig;
use smash_core::data::{split_dataset, synth_dataset, Dataset, SynthKind};
use smash_core::hypernet::HyperNetSpec;
use smash_core::search::{RetrainSettings, SearchSettings, TrainSettings};

use crate::error::{CliError, Result};
use crate::idx::load_idx;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synth {
        synth: SynthKind,
        n: usize,
        classes: usize,
        size: usize,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synth {
            synth: SynthKind::StripedTextures,
            n: 6250,
            classes: 10,
            size: 8,
            seed: 9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub space: SearchSpaceConfig,
    pub hypernet: HyperNetSpec,
    pub train: TrainSettings,
    pub retrain: RetrainSettings,
    pub search: SearchSettings,
    pub dataset: DatasetConfig,
    /// Fraction of the training data held out as the validation split.
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            space: SearchSpaceConfig::v1(),
            hypernet: HyperNetSpec::reference(),
            train: TrainSettings::default(),
            retrain: RetrainSettings::default(),
            search: SearchSettings::default(),
            dataset: DatasetConfig::default(),
            val_fraction: 0.1,
            split_seed: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(crate::error::io_err(path))
    }

    /// Materialize the dataset and carve the validation split.
    pub fn load_dataset(&self, data_dir: Option<&Path>) -> Result<Dataset> {
        let base = match (&self.dataset, data_dir) {
            // An explicit --data directory overrides the config with the
            // conventional file names.
            (_, Some(dir)) => {
                let train = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
                let ti = dir.join("t10k-images-idx3-ubyte");
                let tl = dir.join("t10k-labels-idx1-ubyte");
                if ti.exists() && tl.exists() {
                    train.with_test_from(load_idx(&ti, &tl)?)?
                } else {
                    train
                }
            }
            (DatasetConfig::Synth { synth, n, classes, size, seed }, None) => {
                synth_dataset(*synth, *n, *classes, *size, *seed)?
            }
            (DatasetConfig::Idx { train_images, train_labels, test_images, test_labels }, None) => {
                let train = load_idx(train_images, train_labels)?;
                match (test_images, test_labels) {
                    (Some(ti), Some(tl)) => train.with_test_from(load_idx(ti, tl)?)?,
                    _ => train,
                }
            }
        };
        Ok(split_dataset(base, self.val_fraction, self.split_seed)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smash_core::arch::{BottleneckMode, Variant};

    #[test]
    fn defaults_carry_the_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.space.variant, Variant::V1);
        assert_eq!(c.space.bank_quantum, 6);
        assert_eq!(c.space.depth_divisor, 3);
        assert_eq!(c.space.max_dilation, 3);
        assert_eq!(c.space.unit_choices(), vec![6, 12, 18, 24, 30, 36, 42]);
        assert_eq!(c.space.bottleneck, BottleneckMode::Constant4);
        assert_eq!(c.space.param_budget, 16_000_000);
        assert_eq!(c.hypernet.dense_block_layers, vec![8, 10, 4]);
        assert_eq!(c.hypernet.growth_rate, 10);
        assert_eq!(c.hypernet.activation_slope, 0.02);
        assert_eq!(c.space.generator_out_channels(), 432);
        assert_eq!(c.train.batch_size, 50);
        assert_eq!(c.train.learning_rate, 2e-4);
        assert_eq!(c.retrain.learning_rate, 0.1);
        assert_eq!(c.retrain.momentum, 0.9);
        assert_eq!(c.search.candidates, 500);
        assert_eq!(c.search.warm_perturbations, 100);
        assert_eq!(c.search.chain_steps, 100);
        assert_eq!(c.search.perturb_rate, 0.05);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let json = r#"{ "seed": 1, "not_a_field": true }"#;
        let parsed: std::result::Result<RunConfig, _> = serde_json::from_str(json);
        assert!(parsed.is_err());
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let json = r#"{ "seed": 42 }"#;
        let parsed: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.seed, 42);
        assert_eq!(parsed.search.candidates, 500);
    }

    #[test]
    fn config_roundtrips_through_json() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
    }
}
