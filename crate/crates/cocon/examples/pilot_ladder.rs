//! Scratch pilot: one seed of the ablation ladder on the benchmark config.

use cocon::data::{make_dataset, BlockSpec, DatasetConfig, ViewKind};
use cocon::eval::{evaluate, ProbeConfig};
use cocon::losses::Ablation;
use cocon::model::MultiViewModel;
use cocon::training::{
    train_phase1, train_phase2, LossConfig, ModelConfig, TrainConfig, TrainContext,
};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let p1: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(12);
    let p2: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let lambda: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let tau: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.005);

    let dataset = make_dataset(&DatasetConfig {
        classes: 8,
        clips: 800,
        frame_size: 32,
        crop_margin: 2,
        blocks: BlockSpec::new(4, 3, 2),
        views: vec![ViewKind::Rgb, ViewKind::Flow],
        seed,
        ..Default::default()
    })
    .unwrap();
    let model_cfg = ModelConfig::default();
    let mut loss_cfg = LossConfig::default();
    loss_cfg.weights.lambda = lambda;
    loss_cfg.tau = tau;
    println!("seed={seed} p1={p1} p2={p2} lambda={lambda} tau={tau}");
    let train_cfg = TrainConfig {
        phase1_epochs: p1,
        phase2_epochs: p2,
        seed,
        ..Default::default()
    };
    let ctx = TrainContext {
        dataset: &dataset,
        model_cfg: &model_cfg,
        loss_cfg: &loss_cfg,
        train_cfg: &train_cfg,
    };
    let probe = ProbeConfig::default();

    let t = Instant::now();
    let specs = model_cfg.specs(&dataset.config.views, 4);
    let random = MultiViewModel::init(&specs, train_cfg.seed).unwrap();
    let r_random = evaluate(&random, &dataset, &probe, "random").unwrap();
    println!("[{:6.1}s] random:  {}", t.elapsed().as_secs_f64(), fmt(&r_random));

    let phase1 = train_phase1(&ctx).unwrap();
    let r_cpc = evaluate(&phase1.model, &dataset, &probe, "cpc").unwrap();
    println!("[{:6.1}s] cpc:     {}", t.elapsed().as_secs_f64(), fmt(&r_cpc));

    for ablation in [Ablation::SimCpc, Ablation::SyncCpc, Ablation::Cocon] {
        let out = train_phase2(&ctx, ablation, phase1.model.clone(), None).unwrap();
        let r = evaluate(&out.model, &dataset, &probe, ablation.name()).unwrap();
        println!(
            "[{:6.1}s] {:8} {}  matched_dist {:?}",
            t.elapsed().as_secs_f64(),
            ablation.name(),
            fmt(&r),
            out.matched_distance
        );
        let steps = out.metrics.records("step");
        println!("          last: {}", steps.last().unwrap());
    }
}

fn fmt(r: &cocon::eval::EvalReport) -> String {
    let mut s = String::new();
    for (v, e) in &r.views {
        s += &format!("{v}={:.3} ", e.top1);
    }
    if let Some(e) = r.ensemble_top1 {
        s += &format!("ens={e:.3}");
    }
    s
}
