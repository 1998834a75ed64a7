//! TOML experiment configuration: model shape, synthetic dataset, optimizer.
//!
//! Every field has a default, so a config file only states what it changes.
//! Unknown keys are rejected to catch typos early.

use serde::Deserialize;
use sphervox::netkit::{
    AdamParams, DatasetParams, HeadKind, ModelConfig, SvcLayerSpec, TrainParams, FAMILY_PARTS,
};
use sphervox::sphgrid::GridSpec;

use crate::CliError;

/// Number of classes in the synthetic shape suite.
pub fn synthetic_classes() -> usize {
    FAMILY_PARTS.len()
}

/// Widest part count across the synthetic families; the segmentation head
/// size.
pub fn synthetic_parts() -> usize {
    FAMILY_PARTS.iter().copied().max().unwrap_or(1)
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub model: ModelSection,
    pub dataset: DatasetSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub bandwidth: usize,
    pub h_res: usize,
    pub delta: f64,
    pub density_aware: bool,
    pub layers: Vec<SvcLayerSpec>,
    pub fc_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            bandwidth: 8,
            h_res: 16,
            delta: 1.0 / 32.0,
            density_aware: true,
            layers: vec![
                SvcLayerSpec {
                    channels: 6,
                    bandwidth: 8,
                },
                SvcLayerSpec {
                    channels: 8,
                    bandwidth: 6,
                },
            ],
            fc_widths: vec![16],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub per_class: usize,
    pub points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            per_class: 8,
            points: 512,
            noise_sigma: 0.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 0.01,
            decay_every: 5,
            decay_factor: 0.5,
        }
    }
}

impl FileConfig {
    /// Reads and validates a TOML config file.
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }

    /// Builds the model configuration for the given head. A `--seed` override
    /// replaces the `[model]` seed.
    pub fn model_config(
        &self,
        head: HeadKind,
        seed_override: Option<u64>,
    ) -> Result<ModelConfig<f64>, CliError> {
        let grid = GridSpec::new(self.model.bandwidth, self.model.h_res, self.model.delta)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok(ModelConfig {
            grid,
            density_aware: self.model.density_aware,
            layers: self.model.layers.clone(),
            head,
            fc_widths: self.model.fc_widths.clone(),
            activation: sphervox::netkit::Activation::Relu,
            classes: synthetic_classes(),
            parts: synthetic_parts(),
            seed: seed_override.unwrap_or(self.model.seed),
        })
    }

    pub fn dataset_params(&self) -> DatasetParams {
        DatasetParams {
            per_class: self.dataset.per_class,
            points: self.dataset.points,
            noise_sigma: self.dataset.noise_sigma,
        }
    }

    pub fn train_params(&self) -> TrainParams<f64> {
        TrainParams {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            adam: AdamParams {
                lr: self.train.lr,
                decay_every: self.train.decay_every,
                decay_factor: self.train.decay_factor,
                ..AdamParams::default()
            },
        }
    }
}
