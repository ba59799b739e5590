//! Clip loading and batch assembly (regenerate-on-demand).

use crate::data::{augment, center_crop, sample_blocks, AugmentPolicy, DatasetManifest, ViewKind};
use crate::error::Result;
use crate::util::derive_seed;
use ndarray::{Array5, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// One assembled batch: per-view `(B, N, K, H, W, C)` tensors plus the clip
/// indices serving as instance ids.
pub struct BatchTensors {
    pub views: BTreeMap<ViewKind, ArrayD<f32>>,
    pub instance_ids: Vec<u64>,
}

fn clip_blocks(
    manifest: &DatasetManifest,
    index: usize,
    policy: Option<(&AugmentPolicy, u64)>,
) -> Result<BTreeMap<ViewKind, Array5<f32>>> {
    // The label never enters this pipeline.
    let clip = manifest.generate(index)?.strip_label();
    let blocks = sample_blocks(&clip.views, &manifest.config.blocks)?;
    match policy {
        Some((policy, seed)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            augment(&blocks, policy, &mut rng)
        }
        None => Ok(center_crop(&blocks, manifest.config.crop_margin)),
    }
}

fn assemble(per_clip: Vec<BTreeMap<ViewKind, Array5<f32>>>, ids: Vec<u64>) -> BatchTensors {
    let b = per_clip.len();
    let mut views = BTreeMap::new();
    for (&kind, first) in &per_clip[0] {
        let (n, k, h, w, c) = first.dim();
        let mut out = ArrayD::<f32>::zeros(IxDyn(&[b, n, k, h, w, c]));
        for (i, clip) in per_clip.iter().enumerate() {
            out.slice_mut(ndarray::s![i, .., .., .., .., ..]).assign(&clip[&kind]);
        }
        views.insert(kind, out);
    }
    BatchTensors { views, instance_ids: ids }
}

/// Augmented training batch. Every clip owns an rng derived from
/// `(aug_seed, clip index)`, so results do not depend on worker scheduling.
pub fn load_train_batch(
    manifest: &DatasetManifest,
    indices: &[usize],
    policy: &AugmentPolicy,
    aug_seed: u64,
) -> Result<BatchTensors> {
    let per_clip: Result<Vec<_>> = indices
        .par_iter()
        .map(|&idx| {
            let seed = derive_seed(&[aug_seed, idx as u64]);
            clip_blocks(manifest, idx, Some((policy, seed)))
        })
        .collect();
    Ok(assemble(per_clip?, indices.iter().map(|&i| i as u64).collect()))
}

/// Deterministic center-cropped batch for validation and feature extraction.
pub fn load_eval_batch(manifest: &DatasetManifest, indices: &[usize]) -> Result<BatchTensors> {
    let per_clip: Result<Vec<_>> =
        indices.par_iter().map(|&idx| clip_blocks(manifest, idx, None)).collect();
    Ok(assemble(per_clip?, indices.iter().map(|&i| i as u64).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, BlockSpec, DatasetConfig};

    fn tiny_manifest() -> DatasetManifest {
        make_dataset(&DatasetConfig {
            classes: 4,
            clips: 12,
            frame_size: 16,
            crop_margin: 2,
            blocks: BlockSpec::new(3, 2, 1),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn eval_batch_shapes_are_cropped() {
        let m = tiny_manifest();
        let batch = load_eval_batch(&m, &[0, 1, 2]).unwrap();
        let rgb = &batch.views[&ViewKind::Rgb];
        assert_eq!(rgb.shape(), &[3, 3, 2, 16, 16, 3]);
        assert_eq!(batch.instance_ids, vec![0, 1, 2]);
    }

    #[test]
    fn train_batch_is_deterministic_and_view_aligned() {
        let m = tiny_manifest();
        let policy = AugmentPolicy::train(2);
        let a = load_train_batch(&m, &[0, 3, 5], &policy, 42).unwrap();
        let b = load_train_batch(&m, &[0, 3, 5], &policy, 42).unwrap();
        for (kind, t) in &a.views {
            assert_eq!(t, &b.views[kind]);
        }
        let c = load_train_batch(&m, &[0, 3, 5], &policy, 43).unwrap();
        assert_ne!(a.views[&ViewKind::Rgb], c.views[&ViewKind::Rgb]);
    }
}
