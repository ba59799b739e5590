//! Frame subsampling and block partitioning.

use super::ViewKind;
use crate::error::{CoconError, Result};
use ndarray::{Array4, Array5};
use std::collections::BTreeMap;

/// Block layout: subsample one frame in every `stride`, then split into
/// `n_blocks` disjoint groups of `frames_per_block`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BlockSpec {
    pub n_blocks: usize,
    pub frames_per_block: usize,
    pub stride: usize,
}

impl BlockSpec {
    pub fn new(n_blocks: usize, frames_per_block: usize, stride: usize) -> Self {
        BlockSpec { n_blocks, frames_per_block, stride }
    }

    /// Source frames consumed by one clip.
    pub fn consumed_frames(&self) -> usize {
        self.n_blocks * self.frames_per_block * self.stride
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.frames_per_block == 0 || self.stride == 0 {
            return Err(CoconError::Config(format!("degenerate block spec {self:?}")));
        }
        Ok(())
    }
}

/// Source frame indices of each block; identical for every view.
pub fn block_source_indices(spec: &BlockSpec) -> Vec<Vec<usize>> {
    (0..spec.n_blocks)
        .map(|b| {
            (0..spec.frames_per_block)
                .map(|k| (b * spec.frames_per_block + k) * spec.stride)
                .collect()
        })
        .collect()
}

/// Partition every view of a clip into `(N, K, H, W, C)` block tensors.
pub fn sample_blocks(
    views: &BTreeMap<ViewKind, Array4<f32>>,
    spec: &BlockSpec,
) -> Result<BTreeMap<ViewKind, Array5<f32>>> {
    spec.validate()?;
    let indices = block_source_indices(spec);
    let mut out = BTreeMap::new();
    for (&kind, frames) in views {
        let (t, h, w, c) = frames.dim();
        let needed = spec.consumed_frames();
        if t < needed {
            return Err(CoconError::contract(format!(
                "clip has {t} frames but block spec consumes {needed}"
            )));
        }
        let mut blocks = Array5::<f32>::zeros((spec.n_blocks, spec.frames_per_block, h, w, c));
        for (b, frame_ids) in indices.iter().enumerate() {
            for (k, &src) in frame_ids.iter().enumerate() {
                blocks
                    .index_axis_mut(ndarray::Axis(0), b)
                    .index_axis_mut(ndarray::Axis(0), k)
                    .assign(&frames.index_axis(ndarray::Axis(0), src));
            }
        }
        out.insert(kind, blocks);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn paper_scale_spec_consumes_120_frames() {
        assert_eq!(BlockSpec::new(8, 5, 3).consumed_frames(), 120);
    }

    #[test]
    fn two_frame_identity_case() {
        let spec = BlockSpec::new(2, 1, 1);
        let mut views = BTreeMap::new();
        let mut frames = Array4::<f32>::zeros((2, 4, 4, 1));
        frames[[0, 0, 0, 0]] = 1.0;
        frames[[1, 0, 0, 0]] = 2.0;
        views.insert(ViewKind::Mask, frames);
        let blocks = sample_blocks(&views, &spec).unwrap();
        let b = &blocks[&ViewKind::Mask];
        assert_eq!(b.dim(), (2, 1, 4, 4, 1));
        assert_eq!(b[[0, 0, 0, 0, 0]], 1.0);
        assert_eq!(b[[1, 0, 0, 0, 0]], 2.0);
    }

    #[test]
    fn blocks_are_disjoint() {
        let spec = BlockSpec::new(8, 5, 3);
        let mut seen = HashSet::new();
        for block in block_source_indices(&spec) {
            for idx in block {
                assert!(seen.insert(idx), "frame {idx} appears in two blocks");
            }
        }
        assert!(seen.iter().max().unwrap() < &spec.consumed_frames());
    }

    #[test]
    fn insufficient_frames_rejected() {
        let spec = BlockSpec::new(4, 3, 2);
        let mut views = BTreeMap::new();
        views.insert(ViewKind::Mask, Array4::<f32>::zeros((10, 4, 4, 1)));
        assert!(sample_blocks(&views, &spec).is_err());
    }
}
