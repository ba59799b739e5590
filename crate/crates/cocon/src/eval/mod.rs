//! Downstream evaluation: linear probe or fine-tune classification on the
//! learned (or random) encoders, with dense windowed softmax averaging.

mod features;
mod probe;

pub use features::{extract_features, window_starts};
pub use probe::{train_linear_head, LinearHead};

use crate::data::{DatasetManifest, Split};
use crate::error::{CoconError, Result};
use crate::model::MultiViewModel;
use crate::util::derive_seed;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Train a linear classifier on frozen context features.
    LinearProbe,
    /// Initialize from the checkpoint and train the encoder end-to-end.
    Finetune,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Epoch at which the probe lr steps down by 10x.
    pub decay_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            mode: ProbeMode::LinearProbe,
            dropout: 0.7,
            epochs: 20,
            lr: 1e-3,
            decay_epoch: 15,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoconError::parameter(format!("dropout {} out of [0,1)", self.dropout)));
        }
        if self.epochs == 0 {
            return Err(CoconError::parameter("probe needs >= 1 epoch"));
        }
        Ok(())
    }
}

/// One view's evaluation: accuracy plus everything needed to recount it.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ViewEval {
    pub top1: f64,
    pub per_class: Vec<f64>,
    /// Test-split clip-level class probabilities (window-averaged softmax),
    /// aligned with `labels`.
    pub probs: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
}

impl ViewEval {
    /// Brute-force recount of top-1 accuracy from the stored probabilities.
    pub fn recount_top1(&self) -> f64 {
        let correct = self
            .probs
            .iter()
            .zip(&self.labels)
            .filter(|(p, &l)| argmax(p) == l)
            .count();
        correct as f64 / self.labels.len().max(1) as f64
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    /// Provenance of the evaluated weights (e.g. "random", "cpc", "cocon").
    pub init: String,
    pub mode: ProbeMode,
    pub views: BTreeMap<String, ViewEval>,
    /// Accuracy of the averaged per-view softmax, when >= 2 views evaluated.
    pub ensemble_top1: Option<f64>,
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Evaluate every view of `model` on the labeled splits: train the head on
/// the train split, report test-split accuracy.
pub fn evaluate(
    model: &MultiViewModel,
    manifest: &DatasetManifest,
    cfg: &ProbeConfig,
    init: &str,
) -> Result<EvalReport> {
    cfg.validate()?;
    let classes = manifest.config.classes;
    let train_idx = manifest.indices(Split::Train);
    let test_idx = manifest.indices(Split::Test);
    for class in 0..classes {
        if !train_idx.iter().any(|&i| manifest.records[i].class == class) {
            return Err(CoconError::contract(format!(
                "class {class} absent from the train split"
            )));
        }
    }

    let mut model = model.clone();
    let mut views = BTreeMap::new();
    for kind in model.kinds() {
        if cfg.mode == ProbeMode::Finetune {
            probe::finetune_view(&mut model, kind, manifest, cfg)?;
        }
        let (train_x, _, train_y) = extract_features(&model, kind, manifest, &train_idx)?;
        let head_seed = derive_seed(&[cfg.seed, 0xEA71, kind.name().len() as u64]);
        let head = train_linear_head(&train_x, &train_y, classes, cfg, head_seed)?;

        let (test_x, test_clip, test_y) = extract_features(&model, kind, manifest, &test_idx)?;
        let window_probs = head.predict_probs(&test_x);
        // Average softmax over each clip's windows.
        let mut probs = Vec::with_capacity(test_idx.len());
        let mut labels = Vec::with_capacity(test_idx.len());
        for &clip in &test_idx {
            let rows: Vec<usize> =
                (0..test_clip.len()).filter(|&r| test_clip[r] == clip).collect();
            let mut avg = vec![0f32; classes];
            for &r in &rows {
                for c in 0..classes {
                    avg[c] += window_probs[[r, c]];
                }
            }
            for a in avg.iter_mut() {
                *a /= rows.len() as f32;
            }
            labels.push(test_y[rows[0]]);
            probs.push(avg);
        }

        let mut per_class_correct = vec![0usize; classes];
        let mut per_class_total = vec![0usize; classes];
        let mut correct = 0usize;
        for (p, &l) in probs.iter().zip(&labels) {
            per_class_total[l] += 1;
            if argmax(p) == l {
                per_class_correct[l] += 1;
                correct += 1;
            }
        }
        let top1 = correct as f64 / labels.len().max(1) as f64;
        let per_class = per_class_correct
            .iter()
            .zip(&per_class_total)
            .map(|(&c, &t)| c as f64 / t.max(1) as f64)
            .collect();
        views.insert(kind.name().to_string(), ViewEval { top1, per_class, probs, labels });
    }

    let ensemble_top1 = if views.len() >= 2 {
        let first = views.values().next().unwrap();
        let n = first.labels.len();
        let mut correct = 0usize;
        for i in 0..n {
            let mut avg = vec![0f32; classes];
            for v in views.values() {
                for c in 0..classes {
                    avg[c] += v.probs[i][c];
                }
            }
            if argmax(&avg) == first.labels[i] {
                correct += 1;
            }
        }
        Some(correct as f64 / n.max(1) as f64)
    } else {
        None
    };

    Ok(EvalReport { init: init.to_string(), mode: cfg.mode, views, ensemble_top1 })
}

/// Per-class accuracy differences `a - b`, class ids attached, sorted
/// descending.
pub fn classwise_delta(a: &[f64], b: &[f64]) -> Result<Vec<(usize, f64)>> {
    if a.len() != b.len() {
        return Err(CoconError::contract(format!(
            "class sets differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut deltas: Vec<(usize, f64)> =
        a.iter().zip(b).enumerate().map(|(i, (x, y))| (i, x - y)).collect();
    deltas.sort_by(|l, r| r.1.partial_cmp(&l.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(deltas)
}

#[cfg(test)]
mod tests;
