//! Scratch probe: wall-clock per training epoch on the benchmark config.

use cocon::data::{make_dataset, BlockSpec, DatasetConfig, ViewKind};
use cocon::losses::Ablation;
use cocon::training::{
    train_phase1_view, train_phase2, LossConfig, ModelConfig, TrainConfig, TrainContext,
};
use cocon::model::MultiViewModel;
use std::time::Instant;

fn main() {
    let dataset = make_dataset(&DatasetConfig {
        classes: 8,
        clips: 800,
        frame_size: 32,
        crop_margin: 2,
        blocks: BlockSpec::new(4, 3, 2),
        views: vec![ViewKind::Rgb, ViewKind::Flow],
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let model_cfg = ModelConfig::default();
    let loss_cfg = LossConfig::default();
    let train_cfg = TrainConfig { phase1_epochs: 1, phase2_epochs: 1, ..Default::default() };
    let ctx = TrainContext {
        dataset: &dataset,
        model_cfg: &model_cfg,
        loss_cfg: &loss_cfg,
        train_cfg: &train_cfg,
    };

    let t0 = Instant::now();
    let out = train_phase1_view(&ctx, ViewKind::Rgb, None).unwrap();
    println!(
        "phase1 rgb 1 epoch (35 steps + val): {:.1}s  first loss {:.3} last {:.3}",
        t0.elapsed().as_secs_f64(),
        out.first_step_loss,
        out.last_epoch_mean_loss
    );

    let t0 = Instant::now();
    let out_flow = train_phase1_view(&ctx, ViewKind::Flow, None).unwrap();
    println!(
        "phase1 flow 1 epoch: {:.1}s  first {:.3} last {:.3}",
        t0.elapsed().as_secs_f64(),
        out_flow.first_step_loss,
        out_flow.last_epoch_mean_loss
    );

    let mut views = std::collections::BTreeMap::new();
    views.insert(ViewKind::Rgb, out.model);
    views.insert(ViewKind::Flow, out_flow.model);
    let model = MultiViewModel { views };

    let t0 = Instant::now();
    let p2 = train_phase2(&ctx, Ablation::Cocon, model, None).unwrap();
    println!("phase2 cocon 1 epoch: {:.1}s", t0.elapsed().as_secs_f64());
    let steps = p2.metrics.records("step");
    println!("last step record: {}", steps.last().unwrap());

    let t0 = Instant::now();
    let probe_cfg = cocon::eval::ProbeConfig::default();
    let report = cocon::eval::evaluate(&p2.model, &dataset, &probe_cfg, "speed").unwrap();
    println!("probe (both views, 20 epochs): {:.1}s", t0.elapsed().as_secs_f64());
    for (v, e) in &report.views {
        println!("  {v}: top1 {:.3}", e.top1);
    }
}
