//! Scratch probe: what makes the rgb view's predictive pretraining produce
//! class-decodable features.

use cocon::data::{make_dataset, BlockSpec, DatasetConfig, Split, ViewKind};
use cocon::eval::{evaluate, extract_features, train_linear_head, ProbeConfig};
use cocon::model::{ForwardCtx, MultiViewModel};
use cocon::tensor::Tape;
use cocon::training::{
    load_eval_batch, train_phase1_view, LossConfig, ModelConfig, TrainConfig, TrainContext,
};
use ndarray::Array2;
use std::collections::BTreeMap;

fn pooled_probe(
    model: &MultiViewModel,
    manifest: &cocon::data::DatasetManifest,
    probe: &ProbeConfig,
) -> f64 {
    // Probe the mean-of-block embeddings instead of the context.
    let collect = |split: Split| -> (Array2<f32>, Vec<usize>) {
        let idx = manifest.indices(split);
        let d = model.views[&ViewKind::Rgb].spec.embed_dim;
        let mut feats = Array2::<f32>::zeros((idx.len(), d));
        let mut labels = Vec::new();
        for (row0, chunk) in idx.chunks(16).enumerate() {
            let batch = load_eval_batch(manifest, chunk).unwrap();
            let tape: Tape<f32> = Tape::inference();
            let bound = model.views[&ViewKind::Rgb].bind(&tape);
            let blocks = tape.input(batch.views[&ViewKind::Rgb].clone());
            let fwd = bound.full_forward(blocks, 1, &mut ForwardCtx::eval()).unwrap();
            let e = fwd.instance_embedding.l2_normalize_last().to_array();
            for (bi, &clip) in chunk.iter().enumerate() {
                for j in 0..d {
                    feats[[row0 * 16 + bi, j]] = e[[bi, j]];
                }
                labels.push(manifest.records[clip].class);
            }
        }
        (feats, labels)
    };
    let (train_x, train_y) = collect(Split::Train);
    let head = train_linear_head(&train_x, &train_y, manifest.config.classes, probe, 1).unwrap();
    let (test_x, test_y) = collect(Split::Test);
    let probs = head.predict_probs(&test_x);
    let mut correct = 0;
    for (i, &l) in test_y.iter().enumerate() {
        let row: Vec<f32> = probs.row(i).to_vec();
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == l {
            correct += 1;
        }
    }
    correct as f64 / test_y.len() as f64
}

fn run(label: &str, epochs: usize, width: usize, jitter: f64, grey: f64, tau: f64) {
    let dataset = make_dataset(&DatasetConfig {
        classes: 8,
        clips: 800,
        frame_size: 32,
        crop_margin: 2,
        blocks: BlockSpec::new(4, 3, 2),
        views: vec![ViewKind::Rgb],
        seed: 0,
        ..Default::default()
    })
    .unwrap();
    let model_cfg = ModelConfig { width, ..Default::default() };
    let loss_cfg = LossConfig { tau, ..Default::default() };
    let mut train_cfg = TrainConfig { phase1_epochs: epochs, seed: 0, ..Default::default() };
    train_cfg.augment.color_jitter = jitter;
    train_cfg.augment.grey_prob = grey;
    let ctx = TrainContext {
        dataset: &dataset,
        model_cfg: &model_cfg,
        loss_cfg: &loss_cfg,
        train_cfg: &train_cfg,
    };
    let out = train_phase1_view(&ctx, ViewKind::Rgb, None).unwrap();
    let mut views = BTreeMap::new();
    views.insert(ViewKind::Rgb, out.model);
    let model = MultiViewModel { views };
    let probe = ProbeConfig::default();
    let report = evaluate(&model, &dataset, &probe, "cpc").unwrap();
    let ctx_acc = report.views["rgb"].top1;
    let pool_acc = pooled_probe(&model, &dataset, &probe);
    // Feature variance diagnostic.
    let (f, _, _) =
        extract_features(&model, ViewKind::Rgb, &dataset, &dataset.indices(Split::Test)[..32])
            .unwrap();
    let var = f.var_axis(ndarray::Axis(0), 0.0).sum();
    println!(
        "{label:28} cpc_loss {:.2} ctx_probe {:.3} pooled_probe {:.3} feat_var {var:.3}",
        out.last_epoch_mean_loss, ctx_acc, pool_acc
    );
}

fn main() {
    run("base e18 w8 j.4 g.25 t.1", 18, 8, 0.4, 0.25, 0.1);
    run("epochs30", 30, 8, 0.4, 0.25, 0.1);
    run("width16", 18, 16, 0.4, 0.25, 0.1);
    run("no_coloraug", 18, 8, 0.0, 0.0, 0.1);
    run("tau0.2", 18, 8, 0.4, 0.25, 0.2);
    run("tau0.05", 18, 8, 0.4, 0.25, 0.05);
}
