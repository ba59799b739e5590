//! Soft temporal alignment between two clips from block-level features.

use crate::data::{center_crop, sample_blocks, BlockSpec, MultiViewClip, ViewKind};
use crate::error::{CoconError, Result};
use crate::model::{MultiViewModel, ViewModel};
use crate::tensor::Tape;
use ndarray::Array2;
use std::collections::BTreeMap;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AlignConfig {
    pub view: ViewKind,
    /// Blocks per clip in the alignment grid.
    pub blocks: usize,
    pub frames_per_block: usize,
    pub stride: usize,
    pub crop_margin: usize,
    /// 3x3 box smoothing of the raw similarities before normalization.
    pub smooth: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            view: ViewKind::Rgb,
            blocks: 18,
            frames_per_block: 3,
            stride: 2,
            crop_margin: 2,
            smooth: false,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AlignMeta {
    pub smoothed: bool,
    pub window: usize,
    /// Row normalization rule applied to the raw similarities.
    pub normalization: String,
}

/// Block-by-block similarity between two clips: the raw cosine matrix and a
/// row-stochastic normalized map in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct AlignmentMap {
    pub raw: Array2<f64>,
    pub normalized: Array2<f64>,
    pub meta: AlignMeta,
}

impl AlignmentMap {
    pub fn row_argmax(&self) -> Vec<usize> {
        self.raw
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Mean raw similarity along diagonal offset `d` of a self-alignment
    /// map: the block-lag autocorrelation used to find motion periods.
    pub fn diagonal_autocorrelation(&self) -> Vec<f64> {
        let n = self.raw.nrows();
        (0..n)
            .map(|d| {
                let vals: Vec<f64> = (0..n - d).map(|i| self.raw[[i, i + d]]).collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect()
    }
}

fn block_features(
    model: &ViewModel,
    clip: &MultiViewClip,
    cfg: &AlignConfig,
) -> Result<Array2<f64>> {
    let spec = BlockSpec::new(cfg.blocks, cfg.frames_per_block, cfg.stride);
    let mut views = BTreeMap::new();
    views.insert(cfg.view, clip.view(cfg.view)?.clone());
    let blocks = sample_blocks(&views, &spec)?;
    let blocks = center_crop(&blocks, cfg.crop_margin);
    let tape: Tape<f32> = Tape::inference();
    let bound = model.bind(&tape);
    let (n, k, h, w, c) = blocks[&cfg.view].dim();
    let input = tape.input(
        blocks[&cfg.view]
            .clone()
            .into_shape_with_order((1, n, k, h, w, c))
            .map_err(|e| CoconError::Config(e.to_string()))?
            .into_dyn(),
    );
    let feats = bound.block_embeddings(input)?.l2_normalize_last().to_array();
    let d = feats.shape()[2];
    let mut out = Array2::<f64>::zeros((n, d));
    for b in 0..n {
        for j in 0..d {
            out[[b, j]] = feats[[0, b, j]] as f64;
        }
    }
    Ok(out)
}

fn box_smooth(m: &Array2<f64>, window: usize) -> Array2<f64> {
    let n = m.nrows();
    let cmax = m.ncols();
    let half = window / 2;
    let mut out = Array2::<f64>::zeros((n, cmax));
    for i in 0..n {
        for j in 0..cmax {
            let mut sum = 0.0;
            let mut count = 0usize;
            for di in i.saturating_sub(half)..=(i + half).min(n - 1) {
                for dj in j.saturating_sub(half)..=(j + half).min(cmax - 1) {
                    sum += m[[di, dj]];
                    count += 1;
                }
            }
            out[[i, j]] = sum / count as f64;
        }
    }
    out
}

/// Compare every block of `clip_a` to every block of `clip_b` through one
/// view's encoder. Rows are normalized to a stochastic map by shifting off
/// the row minimum and dividing by the row sum.
pub fn align_videos(
    model: &MultiViewModel,
    clip_a: &MultiViewClip,
    clip_b: &MultiViewClip,
    cfg: &AlignConfig,
) -> Result<AlignmentMap> {
    let spec = BlockSpec::new(cfg.blocks, cfg.frames_per_block, cfg.stride);
    for clip in [clip_a, clip_b] {
        if clip.frames() < spec.consumed_frames() {
            return Err(CoconError::contract(format!(
                "clip has {} frames; alignment needs {}",
                clip.frames(),
                spec.consumed_frames()
            )));
        }
    }
    let view_model = model.view(cfg.view)?;
    let fa = block_features(view_model, clip_a, cfg)?;
    let fb = block_features(view_model, clip_b, cfg)?;
    let raw = fa.dot(&fb.t());

    let base = if cfg.smooth { box_smooth(&raw, 3) } else { raw.clone() };
    let mut normalized = Array2::<f64>::zeros(base.raw_dim());
    for (i, row) in base.rows().into_iter().enumerate() {
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let shifted: Vec<f64> = row.iter().map(|v| v - min).collect();
        let sum: f64 = shifted.iter().sum();
        for (j, v) in shifted.iter().enumerate() {
            normalized[[i, j]] = if sum > 0.0 { v / sum } else { 1.0 / row.len() as f64 };
        }
    }
    Ok(AlignmentMap {
        raw,
        normalized,
        meta: AlignMeta {
            smoothed: cfg.smooth,
            window: 3,
            normalization: "shift_row_min_then_row_sum".to_string(),
        },
    })
}
