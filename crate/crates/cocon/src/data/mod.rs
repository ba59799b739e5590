//! Synthetic multi-view video benchmark: scene generation, block sampling,
//! augmentation and dataset manifests.
//!
//! A clip is a moving sprite over a static textured background. The motion
//! pattern is the class label; sprite shape, color, size, speed and phase are
//! per-clip nuisance. Views of the same clip share the trajectory:
//!
//! - `rgb`: appearance + motion (3 channels)
//! - `flow`: analytic ground-truth motion field (2 channels, zero off-sprite)
//! - `mask`: sprite occupancy with pixel-dropout noise (1 channel, binary)
//! - `heatmap`: blurred sprite-center blob with jitter and frame drops

mod augment;
mod blocks;
mod dataset;
mod scene;

pub use augment::{augment, center_crop, flip_horizontal, AugmentPolicy};
pub use blocks::{block_source_indices, sample_blocks, BlockSpec};
pub use dataset::{make_dataset, ClipRecord, DatasetConfig, DatasetManifest, Split};
pub use scene::{generate_clip, warp_consistency_error, MotionPattern, SceneConfig};

use crate::error::{CoconError, Result};
use ndarray::Array4;
use std::collections::BTreeMap;

/// One input modality of a clip.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Rgb,
    Flow,
    Mask,
    Heatmap,
}

impl ViewKind {
    pub fn channels(&self) -> usize {
        match self {
            ViewKind::Rgb => 3,
            ViewKind::Flow => 2,
            ViewKind::Mask => 1,
            ViewKind::Heatmap => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ViewKind::Rgb => "rgb",
            ViewKind::Flow => "flow",
            ViewKind::Mask => "mask",
            ViewKind::Heatmap => "heatmap",
        }
    }

    pub fn all() -> [ViewKind; 4] {
        [ViewKind::Rgb, ViewKind::Flow, ViewKind::Mask, ViewKind::Heatmap]
    }

    /// Color ops only ever apply to this view.
    pub fn is_color(&self) -> bool {
        matches!(self, ViewKind::Rgb)
    }
}

impl std::str::FromStr for ViewKind {
    type Err = CoconError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(ViewKind::Rgb),
            "flow" => Ok(ViewKind::Flow),
            "mask" => Ok(ViewKind::Mask),
            "heatmap" => Ok(ViewKind::Heatmap),
            other => Err(CoconError::Config(format!("unknown view '{other}'"))),
        }
    }
}

impl std::fmt::Display for ViewKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-view frame tensors `(T, H, W, C)` plus the class label. The label is
/// for evaluation only; strip it before handing clips to self-supervised
/// training.
#[derive(Clone, Debug)]
pub struct MultiViewClip {
    pub views: BTreeMap<ViewKind, Array4<f32>>,
    pub label: usize,
    pub seed: u64,
}

/// A clip with the label removed; the only clip type the self-supervised
/// trainer accepts.
#[derive(Clone, Debug)]
pub struct UnlabeledClip {
    pub views: BTreeMap<ViewKind, Array4<f32>>,
    pub seed: u64,
}

impl MultiViewClip {
    pub fn strip_label(self) -> UnlabeledClip {
        UnlabeledClip { views: self.views, seed: self.seed }
    }

    pub fn frames(&self) -> usize {
        self.views.values().next().map(|v| v.shape()[0]).unwrap_or(0)
    }

    pub fn view(&self, kind: ViewKind) -> Result<&Array4<f32>> {
        self.views
            .get(&kind)
            .ok_or_else(|| CoconError::NotFound(format!("view {kind} not in clip")))
    }
}
