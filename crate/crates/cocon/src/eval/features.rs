//! Context-feature extraction over overlapping half-length block windows.

use crate::data::{DatasetManifest, ViewKind};
use crate::error::Result;
use crate::model::{ForwardCtx, MultiViewModel};
use crate::tensor::Tape;
use crate::training::load_eval_batch;
use ndarray::Array2;

/// Dense-inference window layout over `n_blocks` available blocks: windows
/// of the model's native clip length (`window` blocks) advancing by half a
/// window, so consecutive windows overlap by half their length.
pub fn window_starts(n_blocks: usize, window: usize) -> (usize, Vec<usize>) {
    let win = window.clamp(1, n_blocks);
    let stride = (win / 2).max(1);
    let mut starts: Vec<usize> = (0..=n_blocks - win).step_by(stride).collect();
    if let Some(&last) = starts.last() {
        if last + win < n_blocks {
            starts.push(n_blocks - win);
        }
    }
    (win, starts)
}

/// Per-window context features of one view over the given clips.
///
/// Returns `(features, clip_of_row, labels_of_row)`; rows group by clip in
/// window order. Deterministic: eval mode, center crops.
pub fn extract_features(
    model: &MultiViewModel,
    view: ViewKind,
    manifest: &DatasetManifest,
    indices: &[usize],
) -> Result<(Array2<f32>, Vec<usize>, Vec<usize>)> {
    let n_blocks = manifest.config.blocks.n_blocks;
    let (win, starts) = window_starts(n_blocks, n_blocks);
    let d = model.view(view)?.spec.embed_dim;
    let mut features = Array2::<f32>::zeros((indices.len() * starts.len(), d));
    let mut clip_of_row = Vec::with_capacity(indices.len() * starts.len());
    let mut labels = Vec::with_capacity(indices.len() * starts.len());

    for chunk in indices.chunks(16) {
        let batch = load_eval_batch(manifest, chunk)?;
        let tape: Tape<f32> = Tape::inference();
        let bound = model.view(view)?.bind(&tape);
        let blocks = tape.input(batch.views[&view].clone());
        for (w, &start) in starts.iter().enumerate() {
            let window = blocks.narrow(1, start, win);
            let ctx = bound.context_vector(window, win, &mut ForwardCtx::eval())?;
            let ctx = ctx.to_array();
            for (bi, &clip_idx) in chunk.iter().enumerate() {
                let row_global = indices.iter().position(|&i| i == clip_idx).unwrap()
                    * starts.len()
                    + w;
                for j in 0..d {
                    features[[row_global, j]] = ctx[[bi, j]];
                }
            }
        }
    }
    for &clip_idx in indices {
        let label = manifest.records[clip_idx].class;
        for _ in 0..starts.len() {
            clip_of_row.push(clip_idx);
            labels.push(label);
        }
    }
    Ok((features, clip_of_row, labels))
}
