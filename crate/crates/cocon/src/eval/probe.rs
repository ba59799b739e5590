//! Linear classification head and the fine-tune path.

use super::ProbeConfig;
use crate::data::{DatasetManifest, Split, ViewKind};
use crate::error::Result;
use crate::model::{ForwardCtx, MultiViewModel};
use crate::tensor::{Tape, Tensor};
use crate::training::{load_train_batch, Adam, AdamConfig};
use crate::util::derive_seed;
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Linear softmax classifier over context features.
#[derive(Clone, Debug)]
pub struct LinearHead {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl LinearHead {
    pub fn predict_probs(&self, features: &Array2<f32>) -> Array2<f32> {
        let (n, _) = features.dim();
        let classes = self.bias.len();
        let logits = features.dot(&self.weight);
        let mut probs = Array2::<f32>::zeros((n, classes));
        for i in 0..n {
            let row: Vec<f32> =
                (0..classes).map(|c| logits[[i, c]] + self.bias[c]).collect();
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let sum: f32 = row.iter().map(|v| (v - max).exp()).sum();
            for c in 0..classes {
                probs[[i, c]] = (row[c] - max).exp() / sum;
            }
        }
        probs
    }
}

/// Train the head with feature dropout, Adam, and one 10x lr step-down.
pub fn train_linear_head(
    features: &Array2<f32>,
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<LinearHead> {
    let (n, d) = features.dim();
    assert_eq!(n, labels.len());
    let mut weight = ArrayD::<f32>::zeros(IxDyn(&[d, classes]));
    let mut bias = ArrayD::<f32>::zeros(IxDyn(&[classes]));
    let mut opt: Adam<f32> = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: 1e-5,
        ..Default::default()
    });

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        if epoch == cfg.decay_epoch {
            opt.set_lr(opt.lr() * 0.1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch as u64]));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = Array2::<f32>::zeros((chunk.len(), d));
            let mut y = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).assign(&features.row(i));
                y.push(labels[i]);
            }
            let tape: Tape<f32> = Tape::new();
            let w = tape.param(weight.clone());
            let b = tape.param(bias.clone());
            let mut xt: Tensor<'_, f32> = tape.input(x.into_dyn());
            if cfg.dropout > 0.0 {
                xt = xt.dropout(cfg.dropout, &mut rng);
            }
            let loss = xt.matmul(w).add_bias(b).softmax_cross_entropy(&y).mean_all();
            let grads = tape.backward(loss);
            opt.begin_step();
            if let Some(g) = grads.grad(w) {
                opt.update("w", &mut weight, g);
            }
            if let Some(g) = grads.grad(b) {
                opt.update("b", &mut bias, g);
            }
        }
    }
    Ok(LinearHead {
        weight: weight.into_dimensionality().unwrap(),
        bias: bias.into_dimensionality().unwrap(),
    })
}

/// End-to-end fine-tuning of one view: full-clip context into a linear head,
/// gradients into the encoder. Mutates the view's model in place.
pub fn finetune_view(
    model: &mut MultiViewModel,
    view: ViewKind,
    manifest: &DatasetManifest,
    cfg: &ProbeConfig,
) -> Result<()> {
    let classes = manifest.config.classes;
    let d = model.view(view)?.spec.embed_dim;
    let n_blocks = manifest.config.blocks.n_blocks;
    let mut head_w = ArrayD::<f32>::zeros(IxDyn(&[d, classes]));
    let mut head_b = ArrayD::<f32>::zeros(IxDyn(&[classes]));
    let mut opt: Adam<f32> = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: 1e-5,
        ..Default::default()
    });
    let policy = crate::data::AugmentPolicy::train(manifest.config.crop_margin);
    let mut indices = manifest.indices(Split::Train);
    let batch = 16usize.min(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        if epoch == cfg.decay_epoch {
            opt.set_lr(opt.lr() * 0.1);
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0xF1, view as u64, epoch as u64]));
        indices.shuffle(&mut rng);
        for (bi, chunk) in indices.chunks(batch).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let aug = derive_seed(&[cfg.seed, 0xF2, epoch as u64, bi as u64]);
            let data = load_train_batch(manifest, chunk, &policy, aug)?;
            let labels: Vec<usize> =
                chunk.iter().map(|&i| manifest.records[i].class).collect();
            let mut drop_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0xF3, epoch as u64, bi as u64]));
            let tape: Tape<f32> = Tape::new();
            let bound = model.view(view)?.bind(&tape);
            let blocks = tape.input(data.views[&view].clone());
            let mut fwd = ForwardCtx::train(&mut drop_rng);
            let ctx = bound.context_vector(blocks, n_blocks, &mut fwd)?;
            let w = tape.param(head_w.clone());
            let b = tape.param(head_b.clone());
            let mut feat = ctx;
            if cfg.dropout > 0.0 {
                feat = feat.dropout(cfg.dropout, fwd.rng.as_mut().unwrap());
            }
            let loss = feat.matmul(w).add_bias(b).softmax_cross_entropy(&labels).mean_all();
            let grads = tape.backward(loss);
            opt.begin_step();
            if let Some(g) = grads.grad(w) {
                opt.update("head.w", &mut head_w, g);
            }
            if let Some(g) = grads.grad(b) {
                opt.update("head.b", &mut head_b, g);
            }
            let mut grad_map = std::collections::BTreeMap::new();
            for (name, leaf) in &bound.params {
                if let Some(g) = grads.grad(*leaf) {
                    grad_map.insert(name.clone(), g.clone());
                }
            }
            model.views.get_mut(&view).unwrap().visit_params_mut(|name, p| {
                if let Some(g) = grad_map.get(&name) {
                    opt.update(&format!("view.{view}.{name}"), p, g);
                }
            });
        }
    }
    Ok(())
}
