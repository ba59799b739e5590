//! Training configuration.

use crate::data::{AugmentPolicy, ViewKind};
use crate::error::{CoconError, Result};
use crate::losses::{LossWeights, SimilarityMetric};
use crate::model::EncoderSpec;
use crate::training::AdamConfig;

/// Loss-side knobs shared by both phases.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub weights: LossWeights,
    pub metric: SimilarityMetric,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.005,
            weights: LossWeights::default(),
            metric: SimilarityMetric::MappedCosine,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(CoconError::parameter(format!("tau must be > 0, got {}", self.tau)));
        }
        self.weights.validate()
    }
}

/// Architecture knobs, mapped onto per-view encoder specs.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub width: usize,
    pub dropout: f64,
    /// Future blocks predicted per clip; `None` derives ~3/8 of the blocks.
    pub pred_steps: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed_dim: 32, depth: 3, width: 8, dropout: 0.1, pred_steps: None }
    }
}

impl ModelConfig {
    pub fn resolve_pred_steps(&self, n_blocks: usize) -> usize {
        let s = self
            .pred_steps
            .unwrap_or_else(|| ((n_blocks as f64 * 3.0 / 8.0).round() as usize).max(1));
        s.min(n_blocks.saturating_sub(1)).max(1)
    }

    pub fn spec_for(&self, view: ViewKind, n_blocks: usize) -> EncoderSpec {
        let mut spec = EncoderSpec::new(view, self.embed_dim, self.depth, self.width);
        spec.dropout = self.dropout;
        spec.max_pred_steps = n_blocks.max(8);
        spec
    }

    pub fn specs(&self, views: &[ViewKind], n_blocks: usize) -> Vec<EncoderSpec> {
        views.iter().map(|&v| self.spec_for(v, n_blocks)).collect()
    }
}

/// Plateau-decay policy for the learning rate.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub rel_threshold: f64,
    pub max_decays: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { patience: 3, factor: 0.1, rel_threshold: 1e-3, max_decays: 2 }
    }
}

/// Everything the two training phases need besides the dataset.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub plateau: PlateauConfig,
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase1_epochs: 30,
            phase2_epochs: 20,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            augment: AugmentPolicy::train(2),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(CoconError::Config("batch size must be >= 2".into()));
        }
        if self.phase1_epochs == 0 && self.phase2_epochs == 0 {
            return Err(CoconError::Config("no epochs configured".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(CoconError::Config("learning rate must be > 0".into()));
        }
        Ok(())
    }
}
