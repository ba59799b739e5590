//! Cross-view consistency of nearest-class structure.

use super::EmbeddingStore;
use crate::data::ViewKind;
use crate::error::{CoconError, Result};
use ndarray::Array2;
use std::collections::BTreeMap;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ClassConsistency {
    pub top_m: usize,
    /// Per view: for each class, its `top_m` nearest classes, most similar
    /// first.
    pub per_view: BTreeMap<String, Vec<Vec<usize>>>,
    /// Per class: the intersection of the per-view neighbor lists.
    pub consistent: Vec<Vec<usize>>,
    /// Classes whose intersection holds at least `threshold` neighbors.
    pub threshold: usize,
    pub consistent_class_count: usize,
    pub used_centroids: bool,
}

fn class_similarity_centroids(
    store: &EmbeddingStore,
    view: ViewKind,
    classes: usize,
) -> Result<Array2<f64>> {
    let rows = store.context_rows(view);
    let d = store.dim;
    let mut centroids = Array2::<f64>::zeros((classes, d));
    let mut counts = vec![0usize; classes];
    for &r in &rows {
        let label = store.records[r].label;
        for j in 0..d {
            centroids[[label, j]] += store.vector(r)[j] as f64;
        }
        counts[label] += 1;
    }
    for c in 0..classes {
        if counts[c] == 0 {
            return Err(CoconError::contract(format!("class {c} missing from store")));
        }
        let norm = (0..d).map(|j| centroids[[c, j]].powi(2)).sum::<f64>().sqrt().max(1e-12);
        for j in 0..d {
            centroids[[c, j]] /= norm;
        }
    }
    let mut sim = Array2::<f64>::zeros((classes, classes));
    for a in 0..classes {
        for b in 0..classes {
            sim[[a, b]] = (0..d).map(|j| centroids[[a, j]] * centroids[[b, j]]).sum();
        }
    }
    Ok(sim)
}

fn class_similarity_pairwise(
    store: &EmbeddingStore,
    view: ViewKind,
    classes: usize,
) -> Result<Array2<f64>> {
    let rows = store.context_rows(view);
    let mut sim = Array2::<f64>::zeros((classes, classes));
    let mut count = Array2::<f64>::zeros((classes, classes));
    for (i, &a) in rows.iter().enumerate() {
        for &b in rows.iter().skip(i + 1) {
            let (ca, cb) = (store.records[a].label, store.records[b].label);
            let s = store
                .vector(a)
                .iter()
                .zip(store.vector(b).iter())
                .map(|(x, y)| (*x as f64) * (*y as f64))
                .sum::<f64>();
            sim[[ca, cb]] += s;
            sim[[cb, ca]] += s;
            count[[ca, cb]] += 1.0;
            count[[cb, ca]] += 1.0;
        }
    }
    for a in 0..classes {
        for b in 0..classes {
            if a != b {
                if count[[a, b]] == 0.0 {
                    return Err(CoconError::contract(format!(
                        "no cross pairs between classes {a} and {b}"
                    )));
                }
                sim[[a, b]] /= count[[a, b]];
            }
        }
    }
    Ok(sim)
}

/// For each class and view, the `top_m` nearest classes; then the subset
/// consistent across all views, and the count of classes keeping at least
/// `threshold` consistent neighbors.
pub fn class_consistency(
    store: &EmbeddingStore,
    top_m: usize,
    threshold: usize,
    use_centroids: bool,
) -> Result<ClassConsistency> {
    let views = store.views();
    if views.len() < 2 {
        return Err(CoconError::contract(format!(
            "class consistency needs >= 2 views, store has {}",
            views.len()
        )));
    }
    let classes = store.records.iter().map(|r| r.label).max().unwrap_or(0) + 1;
    if top_m == 0 || top_m >= classes {
        return Err(CoconError::parameter(format!(
            "top_m must be in 1..{classes}, got {top_m}"
        )));
    }

    let mut per_view = BTreeMap::new();
    for &view in &views {
        let sim = if use_centroids {
            class_similarity_centroids(store, view, classes)?
        } else {
            class_similarity_pairwise(store, view, classes)?
        };
        let mut neighbors = Vec::with_capacity(classes);
        for c in 0..classes {
            let mut others: Vec<usize> = (0..classes).filter(|&o| o != c).collect();
            others.sort_by(|&a, &b| {
                sim[[c, b]].partial_cmp(&sim[[c, a]]).unwrap_or(std::cmp::Ordering::Equal)
            });
            others.truncate(top_m);
            neighbors.push(others);
        }
        per_view.insert(view.name().to_string(), neighbors);
    }

    let mut consistent = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut inter: Vec<usize> = per_view.values().next().unwrap()[c].clone();
        for neighbors in per_view.values().skip(1) {
            inter.retain(|x| neighbors[c].contains(x));
        }
        inter.sort_unstable();
        consistent.push(inter);
    }
    let consistent_class_count =
        consistent.iter().filter(|list| list.len() >= threshold).count();
    Ok(ClassConsistency {
        top_m,
        per_view,
        consistent,
        threshold,
        consistent_class_count,
        used_centroids: use_centroids,
    })
}
