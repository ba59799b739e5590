//! Two-phase training: per-view predictive pretraining, then joint training
//! with the cooperative losses.

use super::batch::{load_eval_batch, load_train_batch, BatchTensors};
use super::config::{LossConfig, ModelConfig, TrainConfig};
use super::metrics::MetricsLog;
use super::schedule::{PlateauSchedule, PlateauState};
use super::{Adam, AdamConfig};
use crate::data::{AugmentPolicy, DatasetManifest, ViewKind};
use crate::error::{CoconError, Result};
use crate::losses::{
    cocon_loss, cpc_nce_loss, sim_loss, sync_loss, Ablation, CoopLoss, DensePredictionBatch,
    LossReport, ViewEmbeddingBatch,
};
use crate::model::{view_seed_tag, ForwardCtx, MultiViewModel, ViewForward, ViewModel};
use crate::tensor::{GradStore, Tape, Tensor};
use crate::util::derive_seed;
use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const PHASE1: &str = "phase1_cpc";

pub fn phase2_name(ablation: Ablation) -> String {
    format!("phase2_{}", ablation.name())
}

/// Everything a training phase reads.
pub struct TrainContext<'a> {
    pub dataset: &'a DatasetManifest,
    pub model_cfg: &'a ModelConfig,
    pub loss_cfg: &'a LossConfig,
    pub train_cfg: &'a TrainConfig,
}

impl<'a> TrainContext<'a> {
    pub fn validate(&self) -> Result<()> {
        self.dataset.config.validate()?;
        self.loss_cfg.validate()?;
        self.train_cfg.validate()
    }

    fn pred_steps(&self) -> usize {
        self.model_cfg.resolve_pred_steps(self.dataset.config.blocks.n_blocks)
    }

    /// The training augmentation policy, with the crop margin pinned to the
    /// dataset's rendered margin so train and eval tensors agree in size.
    fn policy(&self) -> AugmentPolicy {
        let mut p = self.train_cfg.augment;
        p.crop_margin = self.dataset.config.crop_margin;
        p
    }

    fn train_batches(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut indices = self.dataset.indices(crate::data::Split::Train);
        indices.shuffle(rng);
        indices
            .chunks(self.train_cfg.batch_size)
            .filter(|c| c.len() >= 2)
            .map(|c| c.to_vec())
            .collect()
    }

    fn val_batches(&self) -> Vec<Vec<usize>> {
        self.dataset
            .indices(crate::data::Split::Val)
            .chunks(self.train_cfg.batch_size)
            .filter(|c| c.len() >= 2)
            .map(|c| c.to_vec())
            .collect()
    }
}

/// Resumable optimizer-side state of one training run.
pub struct TrainerState {
    pub optimizer: Adam<f32>,
    pub schedule: PlateauState,
    pub next_epoch: usize,
    pub step: u64,
}

impl TrainerState {
    fn fresh(opt_cfg: AdamConfig) -> Self {
        TrainerState {
            optimizer: Adam::new(opt_cfg),
            schedule: PlateauState::default(),
            next_epoch: 0,
            step: 0,
        }
    }
}

pub struct Phase1ViewOutput {
    pub model: ViewModel,
    pub state: TrainerState,
    pub metrics: MetricsLog,
    pub first_step_loss: f64,
    pub last_epoch_mean_loss: f64,
}

pub struct Phase1Output {
    pub model: MultiViewModel,
    pub states: BTreeMap<ViewKind, TrainerState>,
    pub metrics: MetricsLog,
}

pub struct Phase2Output {
    pub model: MultiViewModel,
    pub state: TrainerState,
    pub metrics: MetricsLog,
    /// Mean cross-view distance of matched instances on a held-out batch at
    /// phase start and end (requires >= 2 views).
    pub matched_distance: Option<(f64, f64)>,
}

fn batch_tensor<'t>(
    tape: &'t Tape<f32>,
    batch: &BatchTensors,
    view: ViewKind,
) -> Result<Tensor<'t, f32>> {
    let t = batch
        .views
        .get(&view)
        .ok_or_else(|| CoconError::NotFound(format!("view {view} missing from batch")))?;
    Ok(tape.input(t.clone()))
}

/// Per-view predictive terms plus the cooperative term for the configured
/// objective. Sync and sim are always computed (and logged) when two or more
/// views are present; the ablation only controls what enters the total.
/// Subtract the per-column batch mean. Max-pooled embeddings share a large
/// positive component that would cluster every row near one direction;
/// centering spreads them so cosine distances are informative.
fn center_rows<'t>(x: Tensor<'t, f32>) -> Tensor<'t, f32> {
    let mean = x.mean_axis(0);
    x.add_bias(mean.scale(-1.0))
}

fn compose_loss<'t>(
    forwards: &BTreeMap<ViewKind, ViewForward<'t, f32>>,
    instance_ids: &[u64],
    ablation: Ablation,
    loss_cfg: &LossConfig,
) -> Result<(Tensor<'t, f32>, LossReport)> {
    let mut cpc_terms = Vec::new();
    for (kind, fwd) in forwards {
        let batch = DensePredictionBatch::new(fwd.predicted, fwd.target, loss_cfg.tau)?;
        cpc_terms.push((kind.to_string(), cpc_nce_loss(&batch)?));
    }
    let coop = if forwards.len() >= 2 && ablation != Ablation::Cpc {
        let batches: Vec<ViewEmbeddingBatch<'t, f32>> = forwards
            .iter()
            .map(|(kind, fwd)| {
                ViewEmbeddingBatch::from_raw(
                    kind.to_string(),
                    center_rows(fwd.instance_embedding),
                    instance_ids.to_vec(),
                )
            })
            .collect::<Result<_>>()?;
        let sync = sync_loss(&batches, loss_cfg.metric)?;
        let sim = sim_loss(&batches, &loss_cfg.weights, loss_cfg.metric)?;
        let alpha = loss_cfg.weights.alpha as f32;
        let total = match ablation {
            Ablation::Cocon => sync.add(sim.loss.scale(alpha)),
            Ablation::SimCpc => sim.loss,
            Ablation::SyncCpc => sync,
            Ablation::Cpc => unreachable!(),
        };
        Some(CoopLoss {
            total,
            sync_value: sync.item() as f64,
            sim_value: sim.loss.item() as f64,
            mu_used: sim.mu_used,
        })
    } else {
        None
    };
    cocon_loss(&cpc_terms, coop.as_ref(), &loss_cfg.weights, loss_cfg.tau)
}

type BoundParams<'t> = BTreeMap<ViewKind, Vec<(String, Tensor<'t, f32>)>>;

fn forward_views<'t>(
    tape: &'t Tape<f32>,
    model: &MultiViewModel,
    views: &[ViewKind],
    batch: &BatchTensors,
    pred_steps: usize,
    ctx: &mut ForwardCtx<'_>,
) -> Result<(BTreeMap<ViewKind, ViewForward<'t, f32>>, BoundParams<'t>)> {
    let mut out = BTreeMap::new();
    let mut bound_params = BTreeMap::new();
    for &kind in views {
        let bound = model.view(kind)?.bind(tape);
        let blocks = batch_tensor(tape, batch, kind)?;
        out.insert(kind, bound.full_forward(blocks, pred_steps, ctx)?);
        bound_params.insert(kind, bound.params);
    }
    Ok((out, bound_params))
}

/// Gather gradients from the bound leaves and apply one optimizer step.
fn apply_updates(
    model: &mut MultiViewModel,
    bound: &BoundParams<'_>,
    grads: &GradStore<f32>,
    opt: &mut Adam<f32>,
) {
    let mut by_name: BTreeMap<String, ArrayD<f32>> = BTreeMap::new();
    for (kind, params) in bound {
        for (name, leaf) in params {
            if let Some(g) = grads.grad(*leaf) {
                by_name.insert(format!("view.{kind}.{name}"), g.clone());
            }
        }
    }
    opt.begin_step();
    model.visit_params_mut(|name, p| {
        if let Some(g) = by_name.get(&name) {
            opt.update(&name, p, g);
        }
    });
}

/// One optimization step over the given views; returns the loss report.
#[allow(clippy::too_many_arguments)]
fn train_step(
    ctx: &TrainContext<'_>,
    model: &mut MultiViewModel,
    views: &[ViewKind],
    batch_indices: &[usize],
    ablation: Ablation,
    opt: &mut Adam<f32>,
    aug_seed: u64,
    dropout_seed: u64,
    step: u64,
) -> Result<LossReport> {
    let batch = load_train_batch(ctx.dataset, batch_indices, &ctx.policy(), aug_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let tape: Tape<f32> = Tape::new();
    let mut fwd_ctx = ForwardCtx::train(&mut rng);
    let (forwards, bound) =
        forward_views(&tape, model, views, &batch, ctx.pred_steps(), &mut fwd_ctx)?;
    let (total, report) = compose_loss(&forwards, &batch.instance_ids, ablation, ctx.loss_cfg)?;
    if !report.total.is_finite() {
        return Err(CoconError::Diverged {
            step,
            detail: format!("non-finite training loss {}", report.total),
        });
    }
    let grads = tape.backward(total);
    apply_updates(model, &bound, &grads, opt);
    Ok(report)
}

/// Shared epoch loop for both phases. `views` selects which encoders train;
/// seeds derive from `(run seed, phase tag, epoch, step)` so runs resume
/// exactly and per-view phase-1 runs never perturb one another.
#[allow(clippy::too_many_arguments)]
fn run_epochs(
    ctx: &TrainContext<'_>,
    phase: &str,
    view_label: Option<&str>,
    phase_tag: u64,
    views: &[ViewKind],
    ablation: Ablation,
    epochs: usize,
    mut model: MultiViewModel,
    mut state: TrainerState,
) -> Result<(MultiViewModel, TrainerState, MetricsLog, f64, f64)> {
    let seed = ctx.train_cfg.seed;
    let mut metrics = MetricsLog::new();
    let mut schedule = PlateauSchedule::with_state(ctx.train_cfg.plateau, state.schedule);
    let mut first_loss = f64::NAN;
    let mut last_epoch_mean = f64::NAN;
    for epoch in state.next_epoch..epochs {
        let mut order_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[seed, phase_tag, 0xE0, epoch as u64]));
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0usize;
        for chunk in ctx.train_batches(&mut order_rng) {
            state.step += 1;
            let aug = derive_seed(&[seed, phase_tag, 0xA6, epoch as u64, state.step]);
            let drop = derive_seed(&[seed, phase_tag, 0xDD, epoch as u64, state.step]);
            let report = train_step(
                ctx,
                &mut model,
                views,
                &chunk,
                ablation,
                &mut state.optimizer,
                aug,
                drop,
                state.step,
            )?;
            if first_loss.is_nan() {
                first_loss = report.total;
            }
            epoch_sum += report.total;
            epoch_count += 1;
            metrics.log_step(
                phase,
                view_label,
                epoch,
                state.step,
                state.optimizer.lr(),
                &report,
            );
        }
        last_epoch_mean = epoch_sum / epoch_count.max(1) as f64;
        let val = validation_loss(ctx, &model, views, ablation)?;
        if val.is_finite() {
            metrics.log_val(phase, view_label, epoch, val);
            if let Some(factor) = schedule.observe(val) {
                let lr = state.optimizer.lr() * factor;
                state.optimizer.set_lr(lr);
                metrics.log_lr_decay(phase, view_label, epoch, lr);
            }
        }
        state.next_epoch = epoch + 1;
    }
    state.schedule = schedule.state();
    Ok((model, state, metrics, first_loss, last_epoch_mean))
}

/// Train one view's model on the predictive loss alone. Deterministic in
/// `(config, seed)`; independent of any other view's data order.
pub fn train_phase1_view(
    ctx: &TrainContext<'_>,
    view: ViewKind,
    resume: Option<(ViewModel, TrainerState)>,
) -> Result<Phase1ViewOutput> {
    ctx.validate()?;
    if !ctx.dataset.config.views.contains(&view) {
        return Err(CoconError::Config(format!("view {view} not in dataset")));
    }
    let (init, state) = match resume {
        Some((m, s)) => (m, s),
        None => {
            let spec = ctx
                .model_cfg
                .spec_for(view, ctx.dataset.config.blocks.n_blocks);
            let model = ViewModel::init(spec, ctx.train_cfg.seed ^ view_seed_tag(view))?;
            (model, TrainerState::fresh(ctx.train_cfg.optimizer))
        }
    };
    let mut views_map = BTreeMap::new();
    views_map.insert(view, init);
    let model = MultiViewModel { views: views_map };
    let phase_tag = derive_seed(&[0x9a5e_0001, view_seed_tag(view)]);
    let (model, state, metrics, first, last) = run_epochs(
        ctx,
        PHASE1,
        Some(view.name()),
        phase_tag,
        &[view],
        Ablation::Cpc,
        ctx.train_cfg.phase1_epochs,
        model,
        state,
    )?;
    let model = model.views.into_iter().next().unwrap().1;
    Ok(Phase1ViewOutput {
        model,
        state,
        metrics,
        first_step_loss: first,
        last_epoch_mean_loss: last,
    })
}

/// Phase 1 over every dataset view, independently.
pub fn train_phase1(ctx: &TrainContext<'_>) -> Result<Phase1Output> {
    let mut views = BTreeMap::new();
    let mut states = BTreeMap::new();
    let mut metrics = MetricsLog::new();
    for &view in &ctx.dataset.config.views {
        let out = train_phase1_view(ctx, view, None)?;
        views.insert(view, out.model);
        states.insert(view, out.state);
        metrics.extend(out.metrics);
    }
    Ok(Phase1Output { model: MultiViewModel { views }, states, metrics })
}

/// Joint phase: all views optimized together under the configured ablation
/// objective, starting from the given (typically phase-1) model.
pub fn train_phase2(
    ctx: &TrainContext<'_>,
    ablation: Ablation,
    model: MultiViewModel,
    resume: Option<TrainerState>,
) -> Result<Phase2Output> {
    ctx.validate()?;
    let views = model.kinds();
    if ablation != Ablation::Cpc && views.len() < 2 {
        return Err(CoconError::Config(format!(
            "{} training requires >= 2 views, got {}",
            ablation.name(),
            views.len()
        )));
    }
    for view in &ctx.dataset.config.views {
        if !views.contains(view) {
            return Err(CoconError::NotFound(format!("no checkpoint for view {view}")));
        }
    }
    let phase = phase2_name(ablation);
    // The rng stream is ablation-independent: with lambda = 0 the full
    // objective must retrace continued-predictive training exactly.
    let phase_tag = 0x9a5e_0002;
    let state = resume.unwrap_or_else(|| TrainerState::fresh(ctx.train_cfg.optimizer));

    let held_out: Vec<usize> = ctx
        .dataset
        .indices(crate::data::Split::Val)
        .into_iter()
        .take(ctx.train_cfg.batch_size)
        .collect();
    let track_distance = views.len() >= 2 && held_out.len() >= 2;
    let mut metrics = MetricsLog::new();
    let start_distance = if track_distance {
        let d = matched_instance_distance(&model, ctx.dataset, &held_out, ctx.pred_steps())?;
        metrics.log_scalar(&phase, "matched_distance_start", d);
        Some(d)
    } else {
        None
    };

    let (model, state, run_metrics, _, _) = run_epochs(
        ctx,
        &phase,
        None,
        phase_tag,
        &views,
        ablation,
        ctx.train_cfg.phase2_epochs,
        model,
        state,
    )?;
    metrics.extend(run_metrics);

    let matched_distance = match start_distance {
        Some(start) => {
            let end =
                matched_instance_distance(&model, ctx.dataset, &held_out, ctx.pred_steps())?;
            metrics.log_scalar(&phase, "matched_distance_end", end);
            Some((start, end))
        }
        None => None,
    };
    Ok(Phase2Output { model, state, metrics, matched_distance })
}

/// Validation loss: the full configured objective in eval mode.
fn validation_loss(
    ctx: &TrainContext<'_>,
    model: &MultiViewModel,
    views: &[ViewKind],
    ablation: Ablation,
) -> Result<f64> {
    let batches = ctx.val_batches();
    if batches.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in &batches {
        let batch = load_eval_batch(ctx.dataset, chunk)?;
        let tape: Tape<f32> = Tape::inference();
        let mut fwd_ctx = ForwardCtx::eval();
        let (forwards, _) =
            forward_views(&tape, model, views, &batch, ctx.pred_steps(), &mut fwd_ctx)?;
        let (_, report) = compose_loss(&forwards, &batch.instance_ids, ablation, ctx.loss_cfg)?;
        total += report.total;
        count += 1;
    }
    Ok(total / count as f64)
}

/// Mean cross-view distance between matched instances on a fixed batch.
pub fn matched_instance_distance(
    model: &MultiViewModel,
    manifest: &DatasetManifest,
    indices: &[usize],
    pred_steps: usize,
) -> Result<f64> {
    let views = model.kinds();
    if views.len() < 2 {
        return Err(CoconError::contract("matched distance needs >= 2 views"));
    }
    let batch = load_eval_batch(manifest, indices)?;
    let tape: Tape<f32> = Tape::inference();
    let mut fwd_ctx = ForwardCtx::eval();
    let mut embeds: Vec<ArrayD<f32>> = Vec::new();
    for &kind in &views {
        let bound = model.view(kind)?.bind(&tape);
        let blocks = batch_tensor(&tape, &batch, kind)?;
        let fwd = bound.full_forward(blocks, pred_steps, &mut fwd_ctx)?;
        embeds.push(center_rows(fwd.instance_embedding).l2_normalize_last().to_array());
    }
    let k = batch.instance_ids.len();
    let d = embeds[0].shape()[1];
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..views.len() {
        for j in (i + 1)..views.len() {
            let (a, b) = (&embeds[i], &embeds[j]);
            let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
            for row in 0..k {
                let dot: f32 =
                    (0..d).map(|c| a[row * d + c] * b[row * d + c]).sum();
                total += ((1.0 - dot as f64) / 2.0).clamp(0.0, 1.0);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}
