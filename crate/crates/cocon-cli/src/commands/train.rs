//! `cocon train`: phase 1 (per-view predictive) or phase 2 (joint) training.

use super::ensure_manifest;
use crate::config::ExperimentConfig;
use crate::rundir;
use cocon::data::ViewKind;
use cocon::losses::Ablation;
use cocon::model::{load_checkpoint, save_checkpoint, CheckpointMeta, MultiViewModel};
use cocon::training::{train_phase1, train_phase2, TrainContext};
use cocon::{CoconError, Result};
use std::collections::BTreeMap;
use std::path::Path;

pub fn phase1_checkpoint_dir(run_dir: &Path, view: ViewKind) -> std::path::PathBuf {
    run_dir.join("checkpoints").join("phase1").join(view.name())
}

pub fn phase2_checkpoint_dir(run_dir: &Path, ablation: Ablation) -> std::path::PathBuf {
    run_dir.join("checkpoints").join(format!("phase2_{}", ablation.name()))
}

/// Assemble the multi-view model from the per-view phase-1 checkpoints.
pub fn load_phase1_model(run_dir: &Path, views: &[ViewKind]) -> Result<MultiViewModel> {
    let mut map = BTreeMap::new();
    for &view in views {
        let dir = phase1_checkpoint_dir(run_dir, view);
        let loaded = load_checkpoint(&dir).map_err(|_| {
            CoconError::NotFound(format!(
                "phase-1 checkpoint for view {view} at {}; run `cocon train --phase 1` first",
                dir.display()
            ))
        })?;
        let (kind, model) = loaded.model.views.into_iter().next().ok_or_else(|| {
            CoconError::Config(format!("checkpoint {} holds no views", dir.display()))
        })?;
        if kind != view {
            return Err(CoconError::Config(format!(
                "checkpoint {} holds view {kind}, expected {view}",
                dir.display()
            )));
        }
        map.insert(view, model);
    }
    Ok(MultiViewModel { views: map })
}

pub fn run(
    config: &ExperimentConfig,
    run_dir: &Path,
    phase: u8,
    ablation: Ablation,
    force: bool,
) -> Result<()> {
    rundir::init_run_dir(run_dir, config)?;
    let resolved = config.resolve()?;
    let manifest = ensure_manifest(config, run_dir)?;
    let ctx = TrainContext {
        dataset: &manifest,
        model_cfg: &resolved.model,
        loss_cfg: &resolved.loss,
        train_cfg: &resolved.train,
    };
    match phase {
        1 => {
            if rundir::already_done(run_dir, "train_phase1", force) {
                println!("phase 1 already trained; use --force to retrain");
                return Ok(());
            }
            rundir::clear_marker(run_dir, "train_phase1");
            let out = train_phase1(&ctx)?;
            for (view, model) in &out.model.views {
                let dir = phase1_checkpoint_dir(run_dir, *view);
                let mut single = BTreeMap::new();
                single.insert(*view, model.clone());
                let state = &out.states[view];
                save_checkpoint(
                    &dir,
                    &MultiViewModel { views: single },
                    Some(&state.optimizer),
                    &CheckpointMeta {
                        phase: "phase1_cpc".into(),
                        epoch: state.next_epoch,
                        step: state.step,
                    },
                )?;
                println!("saved {}", dir.display());
            }
            out.metrics.save(&run_dir.join("metrics").join("phase1.jsonl"))?;
            rundir::mark_done(run_dir, "train_phase1")
        }
        2 => {
            let tag = format!("train_phase2_{}", ablation.name());
            if rundir::already_done(run_dir, &tag, force) {
                println!("phase 2 ({}) already trained; use --force to retrain", ablation.name());
                return Ok(());
            }
            rundir::clear_marker(run_dir, &tag);
            let init = load_phase1_model(run_dir, &manifest.config.views)?;
            let out = train_phase2(&ctx, ablation, init, None)?;
            let dir = phase2_checkpoint_dir(run_dir, ablation);
            save_checkpoint(
                &dir,
                &out.model,
                Some(&out.state.optimizer),
                &CheckpointMeta {
                    phase: format!("phase2_{}", ablation.name()),
                    epoch: out.state.next_epoch,
                    step: out.state.step,
                },
            )?;
            println!("saved {}", dir.display());
            if let Some((start, end)) = out.matched_distance {
                println!("matched-instance distance: {start:.4} -> {end:.4}");
            }
            out.metrics
                .save(&run_dir.join("metrics").join(format!("phase2_{}.jsonl", ablation.name())))?;
            rundir::mark_done(run_dir, &tag)
        }
        other => Err(CoconError::Config(format!("phase must be 1 or 2, got {other}"))),
    }
}
