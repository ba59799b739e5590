//! Nearest-neighbor clip retrieval over context embeddings.

use super::EmbeddingStore;
use crate::error::{CoconError, Result};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Retrieval {
    pub query: u64,
    pub query_label: usize,
    /// `(video id, cosine similarity, label)`, most similar first.
    pub ranked: Vec<(u64, f64, usize)>,
    /// Fraction of retrieved clips sharing the query's label.
    pub precision_at_k: f64,
}

/// Top-`k` clips by cosine similarity to the query's context embedding,
/// searched within the query's own view, query excluded.
pub fn nearest_neighbors(store: &EmbeddingStore, query: u64, k: usize) -> Result<Retrieval> {
    let query_row = store
        .records
        .iter()
        .position(|r| r.video == query && r.block.is_none())
        .ok_or_else(|| CoconError::NotFound(format!("query video {query} not in store")))?;
    let view = store.records[query_row].view;
    let candidates: Vec<usize> = store
        .context_rows(view)
        .into_iter()
        .filter(|&r| store.records[r].video != query)
        .collect();
    if k == 0 || k > candidates.len() {
        return Err(CoconError::parameter(format!(
            "k must be in 1..={}, got {k}",
            candidates.len()
        )));
    }
    let qv = store.vector(query_row);
    let mut scored: Vec<(u64, f64, usize)> = candidates
        .into_iter()
        .map(|r| {
            let sim = store
                .vector(r)
                .iter()
                .zip(qv.iter())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum::<f64>();
            (store.records[r].video, sim, store.records[r].label)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    scored.truncate(k);
    let query_label = store.records[query_row].label;
    let hits = scored.iter().filter(|(_, _, l)| *l == query_label).count();
    Ok(Retrieval {
        query,
        query_label,
        precision_at_k: hits as f64 / k as f64,
        ranked: scored,
    })
}
