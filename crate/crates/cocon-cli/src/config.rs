//! Experiment configuration file: TOML with strict key validation.

use cocon::data::{BlockSpec, DatasetConfig, ViewKind};
use cocon::eval::{ProbeConfig, ProbeMode};
use cocon::losses::{LossWeights, MuMode, SimilarityMetric};
use cocon::training::{AdamConfig, LossConfig, ModelConfig, PlateauConfig, TrainConfig};
use cocon::CoconError;
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    #[serde(default = "defaults::clips")]
    pub clips: usize,
    #[serde(default = "defaults::frame_size")]
    pub frame_size: usize,
    #[serde(default = "defaults::crop_margin")]
    pub crop_margin: usize,
    #[serde(rename = "N", default = "defaults::n_blocks")]
    pub n_blocks: usize,
    #[serde(rename = "K", default = "defaults::frames_per_block")]
    pub frames_per_block: usize,
    #[serde(default = "defaults::stride")]
    pub stride: usize,
    #[serde(default = "defaults::views")]
    pub views: Vec<String>,
    #[serde(default = "defaults::train_frac")]
    pub train_frac: f64,
    #[serde(default = "defaults::val_frac")]
    pub val_frac: f64,
    #[serde(default = "defaults::mask_noise")]
    pub mask_noise: f64,
    #[serde(default = "defaults::heatmap_noise")]
    pub heatmap_noise: f64,
    #[serde(default = "defaults::bg_pool")]
    pub bg_pool: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "D", default = "defaults::embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "defaults::depth")]
    pub depth: usize,
    #[serde(default = "defaults::width")]
    pub width: usize,
    #[serde(default = "defaults::model_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub pred_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    /// "auto_balance" or "fixed" (the latter reads `mu`).
    #[serde(default = "defaults::mu_mode")]
    pub mu_mode: String,
    #[serde(default)]
    pub mu: Option<f64>,
    /// "mapped_cosine" (default) or "raw_dot".
    #[serde(default = "defaults::metric")]
    pub metric: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "defaults::phase1_epochs")]
    pub phase1_epochs: usize,
    #[serde(default = "defaults::phase2_epochs")]
    pub phase2_epochs: usize,
    #[serde(default = "defaults::batch")]
    pub batch: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    #[serde(default = "default_true")]
    pub random_crop: bool,
    #[serde(default = "default_true")]
    pub hflip: bool,
    #[serde(default = "defaults::color_jitter")]
    pub color_jitter: f64,
    #[serde(default = "defaults::grey_prob")]
    pub grey_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "defaults::eval_mode")]
    pub mode: String,
    #[serde(default = "defaults::eval_epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::eval_dropout")]
    pub dropout: f64,
}

mod defaults {
    pub fn classes() -> usize {
        8
    }
    pub fn clips() -> usize {
        800
    }
    pub fn frame_size() -> usize {
        32
    }
    pub fn crop_margin() -> usize {
        2
    }
    pub fn n_blocks() -> usize {
        4
    }
    pub fn frames_per_block() -> usize {
        3
    }
    pub fn stride() -> usize {
        2
    }
    pub fn views() -> Vec<String> {
        vec!["rgb".into(), "flow".into()]
    }
    pub fn train_frac() -> f64 {
        0.7
    }
    pub fn val_frac() -> f64 {
        0.1
    }
    pub fn mask_noise() -> f64 {
        0.08
    }
    pub fn heatmap_noise() -> f64 {
        0.1
    }
    pub fn bg_pool() -> u64 {
        8
    }
    pub fn embed_dim() -> usize {
        32
    }
    pub fn depth() -> usize {
        3
    }
    pub fn width() -> usize {
        8
    }
    pub fn model_dropout() -> f64 {
        0.1
    }
    pub fn tau() -> f64 {
        0.005
    }
    pub fn alpha() -> f64 {
        1.0
    }
    pub fn lambda() -> f64 {
        10.0
    }
    pub fn mu_mode() -> String {
        "auto_balance".into()
    }
    pub fn metric() -> String {
        "mapped_cosine".into()
    }
    pub fn phase1_epochs() -> usize {
        30
    }
    pub fn phase2_epochs() -> usize {
        20
    }
    pub fn batch() -> usize {
        16
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn weight_decay() -> f64 {
        1e-5
    }
    pub fn patience() -> usize {
        3
    }
    pub fn color_jitter() -> f64 {
        0.4
    }
    pub fn grey_prob() -> f64 {
        0.25
    }
    pub fn eval_mode() -> String {
        "probe".into()
    }
    pub fn eval_epochs() -> usize {
        20
    }
    pub fn eval_dropout() -> f64 {
        0.7
    }
}

macro_rules! section_default {
    ($ty:ty) => {
        impl Default for $ty {
            fn default() -> Self {
                toml::from_str("").expect("defaults")
            }
        }
    };
}
section_default!(DataSection);
section_default!(ModelSection);
section_default!(LossSection);
section_default!(TrainSection);
section_default!(EvalSection);

/// The full experiment file. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CoconError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoconError::Config(format!("cannot read {path:?}: {e}")))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CoconError::Config(format!("{path:?}: {e}")))?;
        cfg.resolve()?; // validate eagerly
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn views(&self) -> Result<Vec<ViewKind>, CoconError> {
        self.data.views.iter().map(|v| v.parse()).collect()
    }

    /// Validate and translate into the library configs.
    pub fn resolve(&self) -> Result<ResolvedConfig, CoconError> {
        let views = self.views()?;
        let dataset = DatasetConfig {
            classes: self.data.classes,
            clips: self.data.clips,
            frame_size: self.data.frame_size,
            crop_margin: self.data.crop_margin,
            blocks: BlockSpec::new(self.data.n_blocks, self.data.frames_per_block, self.data.stride),
            views,
            seed: self.train.seed,
            train_frac: self.data.train_frac,
            val_frac: self.data.val_frac,
            mask_noise: self.data.mask_noise,
            heatmap_noise: self.data.heatmap_noise,
            bg_pool: self.data.bg_pool,
        };
        dataset.validate()?;

        let model = ModelConfig {
            embed_dim: self.model.embed_dim,
            depth: self.model.depth,
            width: self.model.width,
            dropout: self.model.dropout,
            pred_steps: self.model.pred_steps,
        };

        let mu_mode = match (self.loss.mu_mode.as_str(), self.loss.mu) {
            ("auto_balance", None) => MuMode::AutoBalance,
            ("auto_balance", Some(_)) => {
                return Err(CoconError::Config(
                    "loss.mu is only valid with mu_mode = \"fixed\"".into(),
                ))
            }
            ("fixed", Some(mu)) => MuMode::Fixed(mu),
            ("fixed", None) => {
                return Err(CoconError::Config("mu_mode = \"fixed\" requires loss.mu".into()))
            }
            (other, _) => {
                return Err(CoconError::Config(format!(
                    "unknown mu_mode '{other}' (auto_balance | fixed)"
                )))
            }
        };
        let metric = match self.loss.metric.as_str() {
            "mapped_cosine" => SimilarityMetric::MappedCosine,
            "raw_dot" => SimilarityMetric::RawDot,
            other => {
                return Err(CoconError::Config(format!(
                    "unknown metric '{other}' (mapped_cosine | raw_dot)"
                )))
            }
        };
        let loss = LossConfig {
            tau: self.loss.tau,
            weights: LossWeights { alpha: self.loss.alpha, lambda: self.loss.lambda, mu_mode },
            metric,
        };
        loss.validate()?;

        let mut augment = cocon::data::AugmentPolicy::train(self.data.crop_margin);
        augment.crop = self.train.random_crop;
        augment.hflip = self.train.hflip;
        augment.color_jitter = self.train.color_jitter;
        augment.grey_prob = self.train.grey_prob;
        let train = TrainConfig {
            phase1_epochs: self.train.phase1_epochs,
            phase2_epochs: self.train.phase2_epochs,
            batch_size: self.train.batch,
            optimizer: AdamConfig {
                lr: self.train.lr,
                weight_decay: self.train.weight_decay,
                ..Default::default()
            },
            plateau: PlateauConfig { patience: self.train.patience, ..Default::default() },
            augment,
            seed: self.train.seed,
        };
        train.validate()?;

        let probe_mode = match self.eval.mode.as_str() {
            "probe" => ProbeMode::LinearProbe,
            "finetune" => ProbeMode::Finetune,
            other => {
                return Err(CoconError::Config(format!(
                    "unknown eval mode '{other}' (probe | finetune)"
                )))
            }
        };
        let probe = ProbeConfig {
            mode: probe_mode,
            dropout: self.eval.dropout,
            epochs: self.eval.epochs,
            lr: self.eval.lr,
            decay_epoch: (self.eval.epochs * 3 / 4).max(1),
            batch_size: 64,
            seed: self.train.seed,
        };
        probe.validate()?;

        Ok(ResolvedConfig { dataset, model, loss, train, probe })
    }
}

/// Library-level configs, validated.
pub struct ResolvedConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}
