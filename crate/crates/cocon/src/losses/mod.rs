//! Loss terms for predictive contrastive training and cross-view cooperation.
//!
//! Everything here is a pure function from embedding tensors to a scalar on
//! the tape; no encoder or data knowledge. Conventions:
//!
//! - The distance is `D(u, v) = (1 - u·v) / 2` on unit vectors, so `D` lives
//!   in `[0, 1]` with 0 at identity and 1 at antipodes. A raw-dot-product
//!   variant is available through [`SimilarityMetric::RawDot`].
//! - Written-out sums are normalized by their term counts, so the loss
//!   weights are batch-size independent.

mod report;

pub use report::LossReport;

use crate::error::{CoconError, Result};
use crate::tensor::{Scalar, Tensor};
use ndarray::{Array2, ArrayD, IxDyn};

/// Distance used inside the cooperative losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    /// `(1 - u·v) / 2`, range `[0, 1]`.
    MappedCosine,
    /// Plain `u·v`, range `[-1, 1]`. Kept for comparison runs; the hinge in
    /// the instance-discrimination loss is looser under this metric.
    RawDot,
}

impl Default for SimilarityMetric {
    fn default() -> Self {
        SimilarityMetric::MappedCosine
    }
}

/// Policy for the weight balancing positive and negative terms of the
/// instance-discrimination loss.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    /// `mu = (#positive terms) / (#negative terms)` on the raw sums, which
    /// makes both components contribute equally once sums are normalized.
    AutoBalance,
    /// Fixed coefficient applied to the count-normalized negative term.
    Fixed(f64),
}

/// Coefficients combining the loss terms.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    /// Weight of the instance-discrimination term inside the cooperative loss.
    pub alpha: f64,
    /// Weight of the cooperative loss inside the total objective.
    pub lambda: f64,
    pub mu_mode: MuMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, lambda: 10.0, mu_mode: MuMode::AutoBalance }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(CoconError::parameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(CoconError::parameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if let MuMode::Fixed(mu) = self.mu_mode {
            if mu < 0.0 || !mu.is_finite() {
                return Err(CoconError::parameter(format!("fixed mu must be >= 0, got {mu}")));
            }
        }
        Ok(())
    }
}

/// Named training objectives of the loss-ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Per-view predictive loss only.
    Cpc,
    /// Predictive loss plus weighted instance-discrimination term.
    SimCpc,
    /// Predictive loss plus weighted similarity-structure term.
    SyncCpc,
    /// The full objective: predictive + weighted (sync + alpha * sim).
    Cocon,
}

impl Ablation {
    pub fn name(&self) -> &'static str {
        match self {
            Ablation::Cpc => "cpc",
            Ablation::SimCpc => "sim_cpc",
            Ablation::SyncCpc => "sync_cpc",
            Ablation::Cocon => "cocon",
        }
    }
}

// ---------------------------------------------------------------------------
// Batch types
// ---------------------------------------------------------------------------

/// Predicted and target latent maps for the predictive contrastive loss,
/// both shaped `(B, S, H', W', D)`. Each spatial fiber is L2-normalized
/// inside the loss, so raw encoder outputs are valid inputs.
pub struct DensePredictionBatch<'t, S: Scalar> {
    predicted: Tensor<'t, S>,
    target: Tensor<'t, S>,
    temperature: f64,
}

impl<'t, S: Scalar> DensePredictionBatch<'t, S> {
    pub fn new(predicted: Tensor<'t, S>, target: Tensor<'t, S>, temperature: f64) -> Result<Self> {
        let ps = predicted.shape();
        let ts = target.shape();
        if ps != ts {
            return Err(CoconError::contract(format!(
                "predicted shape {ps:?} != target shape {ts:?}"
            )));
        }
        if ps.len() != 5 {
            return Err(CoconError::contract(format!(
                "dense prediction batch must be (B,S,H',W',D), got {ps:?}"
            )));
        }
        // A single-candidate batch is legal and yields exactly zero loss
        // (softmax over one element); contrast needs >= 2 to be informative.
        let candidates: usize = ps[..4].iter().product();
        if candidates == 0 || ps[4] == 0 {
            return Err(CoconError::contract(format!(
                "dense prediction batch has an empty dimension: {ps:?}"
            )));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(CoconError::parameter(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        Ok(DensePredictionBatch { predicted, target, temperature })
    }

    pub fn candidate_count(&self) -> usize {
        self.predicted.shape()[..4].iter().product()
    }
}

/// One pooled block-level embedding per clip for one view, rows unit-norm.
pub struct ViewEmbeddingBatch<'t, S: Scalar> {
    pub view_id: String,
    h: Tensor<'t, S>,
    instance_ids: Vec<u64>,
}

impl<'t, S: Scalar> ViewEmbeddingBatch<'t, S> {
    /// Build from raw (not yet normalized) embeddings; rows are normalized on
    /// the tape so gradients flow through the normalization.
    pub fn from_raw(
        view_id: impl Into<String>,
        h_raw: Tensor<'t, S>,
        instance_ids: Vec<u64>,
    ) -> Result<Self> {
        let shape = h_raw.shape();
        if shape.len() != 2 {
            return Err(CoconError::contract(format!("embeddings must be (K,D), got {shape:?}")));
        }
        if shape[0] != instance_ids.len() {
            return Err(CoconError::contract(format!(
                "{} rows but {} instance ids",
                shape[0],
                instance_ids.len()
            )));
        }
        check_unique(&instance_ids)?;
        {
            let v = h_raw.value();
            let d = shape[1];
            for (row, chunk) in v.as_slice().unwrap().chunks_exact(d).enumerate() {
                let norm: f64 = chunk.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
                if norm < 1e-8 {
                    return Err(CoconError::Normalization(format!(
                        "row {row} of view {} has near-zero norm",
                        "embedding batch"
                    )));
                }
            }
        }
        Ok(ViewEmbeddingBatch {
            view_id: view_id.into(),
            h: h_raw.l2_normalize_last(),
            instance_ids,
        })
    }

    /// Build from rows that are already unit-normalized (tolerance 1e-5).
    pub fn from_unit(
        view_id: impl Into<String>,
        h: Tensor<'t, S>,
        instance_ids: Vec<u64>,
    ) -> Result<Self> {
        let shape = h.shape();
        if shape.len() != 2 || shape[0] != instance_ids.len() {
            return Err(CoconError::contract(format!(
                "embeddings must be (K,D) with one id per row, got {shape:?} and {} ids",
                instance_ids.len()
            )));
        }
        check_unique(&instance_ids)?;
        {
            let v = h.value();
            for (row, chunk) in v.as_slice().unwrap().chunks_exact(shape[1]).enumerate() {
                let norm: f64 = chunk.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-5 {
                    return Err(CoconError::contract(format!(
                        "row {row} norm {norm} not unit within 1e-5"
                    )));
                }
            }
        }
        Ok(ViewEmbeddingBatch { view_id: view_id.into(), h, instance_ids })
    }

    pub fn embeddings(&self) -> Tensor<'t, S> {
        self.h
    }

    pub fn instance_ids(&self) -> &[u64] {
        &self.instance_ids
    }

    pub fn num_instances(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.h.shape()[1]
    }
}

fn check_unique(ids: &[u64]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    for &id in ids {
        if !seen.insert(id) {
            return Err(CoconError::contract(format!("duplicate instance id {id} in batch")));
        }
    }
    Ok(())
}

/// Pairwise cross-instance distance matrix of one view over a batch:
/// symmetric, zero diagonal, entries in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(CoconError::contract(format!("similarity matrix must be square: {r}x{c}")));
        }
        for a in 0..r {
            if values[[a, a]].abs() > 1e-9 {
                return Err(CoconError::contract("similarity matrix diagonal must be 0"));
            }
            for b in 0..r {
                let v = values[[a, b]];
                if !(-1e-6..=1.0 + 1e-6).contains(&v) {
                    return Err(CoconError::contract(format!("entry ({a},{b})={v} out of [0,1]")));
                }
                if (v - values[[b, a]]).abs() >= 1e-6 {
                    return Err(CoconError::contract(format!("asymmetry at ({a},{b})")));
                }
            }
        }
        Ok(SimilarityMatrix { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// `(1 - u·v) / 2` for unit vectors: 0 at `u = v`, 1 at `u = -v`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(CoconError::contract(format!("length mismatch {} vs {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < 1e-8 || nv < 1e-8 {
        return Err(CoconError::Normalization("zero-norm input to cosine_distance".to_string()));
    }
    if (nu - 1.0).abs() > 1e-4 || (nv - 1.0).abs() > 1e-4 {
        return Err(CoconError::contract(format!(
            "inputs must be unit-normalized (norms {nu:.6}, {nv:.6})"
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(((1.0 - dot) / 2.0).clamp(0.0, 1.0))
}

/// Pairwise distance matrix `W[a,b] = D(h_a, h_b)` with forced zero diagonal.
pub fn similarity_matrix<S: Scalar>(batch: &ViewEmbeddingBatch<'_, S>) -> Result<SimilarityMatrix> {
    let h = batch.embeddings().to_array();
    let k = batch.num_instances();
    let d = batch.dim();
    let rows = h.as_slice().unwrap();
    let mut w = Array2::<f64>::zeros((k, k));
    for a in 0..k {
        for b in (a + 1)..k {
            let dot: f64 = (0..d)
                .map(|j| rows[a * d + j].as_f64() * rows[b * d + j].as_f64())
                .sum();
            let dist = ((1.0 - dot) / 2.0).clamp(0.0, 1.0);
            w[[a, b]] = dist;
            w[[b, a]] = dist;
        }
    }
    SimilarityMatrix::new(w)
}

/// Off-diagonal ones mask as a constant leaf.
fn offdiag_mask<'t, S: Scalar>(any: Tensor<'t, S>, k: usize) -> Tensor<'t, S> {
    let mut m = ArrayD::from_elem(IxDyn(&[k, k]), S::one());
    for a in 0..k {
        m[[a, a]] = S::zero();
    }
    any.tape().input(m)
}

/// Identity-matrix mask as a constant leaf.
fn diag_mask<'t, S: Scalar>(any: Tensor<'t, S>, k: usize) -> Tensor<'t, S> {
    let mut m = ArrayD::from_elem(IxDyn(&[k, k]), S::zero());
    for a in 0..k {
        m[[a, a]] = S::one();
    }
    any.tape().input(m)
}

/// Distance matrix between two embedding tensors on the tape.
/// For equal tensors this is the view's similarity matrix (up to diagonal).
fn distance_tensor<'t, S: Scalar>(
    a: Tensor<'t, S>,
    b: Tensor<'t, S>,
    metric: SimilarityMetric,
) -> Tensor<'t, S> {
    let gram = a.matmul_nt(b);
    match metric {
        SimilarityMetric::MappedCosine => {
            gram.affine(S::cast(-0.5), S::cast(0.5))
        }
        SimilarityMetric::RawDot => gram,
    }
}

fn validate_views<S: Scalar>(views: &[ViewEmbeddingBatch<'_, S>], op: &str) -> Result<(usize, usize)> {
    if views.len() < 2 {
        return Err(CoconError::contract(format!("{op} needs >= 2 views, got {}", views.len())));
    }
    let k = views[0].num_instances();
    let d = views[0].dim();
    for v in &views[1..] {
        if v.num_instances() != k || v.dim() != d {
            return Err(CoconError::contract(format!(
                "{op}: view {} shape ({}, {}) misaligned with ({}, {})",
                v.view_id,
                v.num_instances(),
                v.dim(),
                k,
                d
            )));
        }
        if v.instance_ids() != views[0].instance_ids() {
            return Err(CoconError::contract(format!(
                "{op}: instance ids of view {} not aligned with view {}",
                v.view_id, views[0].view_id
            )));
        }
    }
    Ok((k, d))
}

/// Mean squared disagreement between the views' distance matrices, over all
/// unordered view pairs and ordered instance pairs `a != b`.
///
/// Zero exactly when every view induces the same distance matrix.
pub fn sync_loss<'t, S: Scalar>(
    views: &[ViewEmbeddingBatch<'t, S>],
    metric: SimilarityMetric,
) -> Result<Tensor<'t, S>> {
    let (k, _) = validate_views(views, "sync_loss")?;
    if k < 2 {
        return Err(CoconError::contract("sync_loss needs >= 2 instances"));
    }
    let mats: Vec<Tensor<'t, S>> =
        views.iter().map(|v| distance_tensor(v.embeddings(), v.embeddings(), metric)).collect();
    let mask = offdiag_mask(mats[0], k);
    let pair_count = views.len() * (views.len() - 1) / 2;
    let term_count = (pair_count * k * (k - 1)) as f64;
    let mut acc: Option<Tensor<'t, S>> = None;
    for i in 0..mats.len() {
        for j in (i + 1)..mats.len() {
            let diff = mats[i].subtract(mats[j]).multiply(mask);
            let sq = diff.square().sum_all();
            acc = Some(match acc {
                Some(t) => t.add(sq),
                None => sq,
            });
        }
    }
    Ok(acc.unwrap().scale(S::cast(1.0 / term_count)))
}

/// Instance-discrimination loss across views and its balancing weight.
pub struct SimLoss<'t, S: Scalar> {
    pub loss: Tensor<'t, S>,
    /// The weight applied to the raw negative sum; under
    /// [`MuMode::AutoBalance`] this is `#positives / #negatives`.
    pub mu_used: f64,
}

/// Pulls the same instance together across views and pushes different
/// instances to distance >= 1 via a hinge, positive and negative components
/// normalized by their term counts.
pub fn sim_loss<'t, S: Scalar>(
    views: &[ViewEmbeddingBatch<'t, S>],
    weights: &LossWeights,
    metric: SimilarityMetric,
) -> Result<SimLoss<'t, S>> {
    weights.validate()?;
    let (k, _) = validate_views(views, "sim_loss")?;
    let pair_count = views.len() * (views.len() - 1) / 2;
    let pos_count = (pair_count * k) as f64;
    let neg_count = (pair_count * k * (k - 1)) as f64;

    let pos_mask = diag_mask(views[0].embeddings(), k);
    let neg_mask = offdiag_mask(views[0].embeddings(), k);
    let one = S::one();

    let mut pos_sum: Option<Tensor<'t, S>> = None;
    let mut neg_sum: Option<Tensor<'t, S>> = None;
    for i in 0..views.len() {
        for j in (i + 1)..views.len() {
            let cross = distance_tensor(views[i].embeddings(), views[j].embeddings(), metric);
            let pos = cross.multiply(pos_mask).sum_all();
            pos_sum = Some(match pos_sum {
                Some(t) => t.add(pos),
                None => pos,
            });
            if k > 1 {
                let hinge = cross.affine(-one, one).relu().multiply(neg_mask).sum_all();
                neg_sum = Some(match neg_sum {
                    Some(t) => t.add(hinge),
                    None => hinge,
                });
            }
        }
    }

    let pos_mean = pos_sum.unwrap().scale(S::cast(1.0 / pos_count));
    let (loss, mu_used) = match (neg_sum, weights.mu_mode) {
        (None, _) => (pos_mean, 0.0),
        (Some(neg), MuMode::AutoBalance) => {
            // mu = pos_count / neg_count on raw sums, i.e. unit weight on the
            // count-normalized negative mean.
            let neg_mean = neg.scale(S::cast(1.0 / neg_count));
            (pos_mean.add(neg_mean), pos_count / neg_count)
        }
        (Some(neg), MuMode::Fixed(mu)) => {
            let neg_mean = neg.scale(S::cast(mu / neg_count));
            (pos_mean.add(neg_mean), mu)
        }
    };
    Ok(SimLoss { loss, mu_used })
}

/// The combined cooperative term `sync + alpha * sim` with its parts.
pub struct CoopLoss<'t, S: Scalar> {
    pub total: Tensor<'t, S>,
    pub sync_value: f64,
    pub sim_value: f64,
    pub mu_used: f64,
}

pub fn coop_loss<'t, S: Scalar>(
    views: &[ViewEmbeddingBatch<'t, S>],
    weights: &LossWeights,
    metric: SimilarityMetric,
) -> Result<CoopLoss<'t, S>> {
    weights.validate()?;
    let sync = sync_loss(views, metric)?;
    let sim = sim_loss(views, weights, metric)?;
    let total = sync.add(sim.loss.scale(S::cast(weights.alpha)));
    Ok(CoopLoss {
        total,
        sync_value: sync.item().as_f64(),
        sim_value: sim.loss.item().as_f64(),
        mu_used: sim.mu_used,
    })
}

/// Mean cross-entropy distinguishing each predicted latent fiber's true
/// target from every other target fiber in the batch (across clips, steps
/// and spatial positions). Both inputs are fiber-normalized internally.
pub fn cpc_nce_loss<'t, S: Scalar>(batch: &DensePredictionBatch<'t, S>) -> Result<Tensor<'t, S>> {
    let m = batch.candidate_count();
    let d = *batch.predicted.shape().last().unwrap();
    let pred = batch.predicted.reshape(&[m, d]).l2_normalize_last();
    let tgt = batch.target.reshape(&[m, d]).l2_normalize_last();
    let logits = pred.matmul_nt(tgt).scale(S::cast(1.0 / batch.temperature));
    let targets: Vec<usize> = (0..m).collect();
    Ok(logits.softmax_cross_entropy(&targets).mean_all())
}

/// Total objective assembled from per-view predictive terms and an optional
/// cooperative term, with every sub-term recorded.
pub fn cocon_loss<'t, S: Scalar>(
    cpc_terms: &[(String, Tensor<'t, S>)],
    coop: Option<&CoopLoss<'t, S>>,
    weights: &LossWeights,
    temperature: f64,
) -> Result<(Tensor<'t, S>, LossReport)> {
    weights.validate()?;
    if cpc_terms.is_empty() {
        return Err(CoconError::contract("cocon_loss needs >= 1 per-view cpc term"));
    }
    let mut total: Option<Tensor<'t, S>> = None;
    let mut report = LossReport::new(temperature, weights.alpha, weights.lambda);
    for (view, term) in cpc_terms {
        report.record_cpc(view, term.item().as_f64());
        total = Some(match total {
            Some(t) => t.add(*term),
            None => *term,
        });
    }
    let mut total = total.unwrap();
    if let Some(coop) = coop {
        total = total.add(coop.total.scale(S::cast(weights.lambda)));
        report.record_coop(coop.sync_value, coop.sim_value, coop.mu_used, coop.total.item().as_f64());
    }
    report.set_total(total.item().as_f64());
    Ok((total, report))
}
