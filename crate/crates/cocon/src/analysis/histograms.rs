//! Same-class vs cross-class cosine-similarity distributions.

use super::EmbeddingStore;
use crate::data::ViewKind;
use crate::error::{CoconError, Result};

pub const HISTOGRAM_BINS: usize = 40;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SimilarityHistograms {
    pub view: ViewKind,
    /// Bin counts over cosine similarity in [-1, 1].
    pub same_class: Vec<usize>,
    pub cross_class: Vec<usize>,
    pub mean_same: f64,
    pub mean_cross: f64,
    /// mean_same - mean_cross; the headline separation number.
    pub separation: f64,
    /// Classes excluded for having fewer than two exported clips.
    pub skipped_classes: Vec<usize>,
}

impl SimilarityHistograms {
    pub fn bin_edges() -> Vec<f64> {
        (0..=HISTOGRAM_BINS)
            .map(|i| -1.0 + 2.0 * i as f64 / HISTOGRAM_BINS as f64)
            .collect()
    }
}

fn bin_of(sim: f64) -> usize {
    let t = ((sim + 1.0) / 2.0).clamp(0.0, 1.0);
    ((t * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

/// Pairwise cosine similarities over one view's context embeddings, split
/// into same-class and cross-class distributions.
pub fn similarity_histograms(
    store: &EmbeddingStore,
    view: ViewKind,
) -> Result<SimilarityHistograms> {
    let rows = store.context_rows(view);
    if rows.len() < 2 {
        return Err(CoconError::contract(format!(
            "need >= 2 context embeddings for view {view}"
        )));
    }
    let mut class_counts = std::collections::BTreeMap::new();
    for &r in &rows {
        *class_counts.entry(store.records[r].label).or_insert(0usize) += 1;
    }
    let skipped_classes: Vec<usize> = class_counts
        .iter()
        .filter(|(_, &c)| c < 2)
        .map(|(&cls, _)| cls)
        .collect();
    for &cls in &skipped_classes {
        log::warn!("class {cls} has < 2 samples in view {view}; skipped from histograms");
    }
    let keep: Vec<usize> = rows
        .into_iter()
        .filter(|&r| !skipped_classes.contains(&store.records[r].label))
        .collect();

    let mut same = vec![0usize; HISTOGRAM_BINS];
    let mut cross = vec![0usize; HISTOGRAM_BINS];
    let mut sum_same = 0.0;
    let mut n_same = 0usize;
    let mut sum_cross = 0.0;
    let mut n_cross = 0usize;
    for i in 0..keep.len() {
        for j in (i + 1)..keep.len() {
            let (a, b) = (keep[i], keep[j]);
            let sim = store
                .vector(a)
                .iter()
                .zip(store.vector(b).iter())
                .map(|(x, y)| (*x as f64) * (*y as f64))
                .sum::<f64>();
            if store.records[a].label == store.records[b].label {
                same[bin_of(sim)] += 1;
                sum_same += sim;
                n_same += 1;
            } else {
                cross[bin_of(sim)] += 1;
                sum_cross += sim;
                n_cross += 1;
            }
        }
    }
    let mean_same = sum_same / n_same.max(1) as f64;
    let mean_cross = sum_cross / n_cross.max(1) as f64;
    Ok(SimilarityHistograms {
        view,
        same_class: same,
        cross_class: cross,
        mean_same,
        mean_cross,
        separation: mean_same - mean_cross,
        skipped_classes,
    })
}
