//! Scratch probe: sync-only vs sync+sim dynamics for tiny per-view linear
//! maps over freshly sampled noisy multi-view features.

use cocon::losses::{
    coop_loss, similarity_matrix, sync_loss, LossWeights, SimilarityMetric, ViewEmbeddingBatch,
};
use cocon::tensor::Tape;
use cocon::training::{Adam, AdamConfig};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch_distance_variance(h: &[ArrayD<f64>]) -> f64 {
    let mut dists = Vec::new();
    for p in h {
        let tape: Tape<f64> = Tape::inference();
        let ids: Vec<u64> = (0..p.shape()[0] as u64).collect();
        let b = ViewEmbeddingBatch::from_raw("v", tape.param(p.clone()), ids).unwrap();
        let w = similarity_matrix(&b).unwrap();
        let k = w.dim();
        for a in 0..k {
            for bb in (a + 1)..k {
                dists.push(w.values()[[a, bb]]);
            }
        }
    }
    let n = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / n;
    dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n
}

#[allow(clippy::too_many_arguments)]
fn run(
    views: usize,
    k: usize,
    d: usize,
    f_shared: usize,
    sigma: f64,
    lr: f64,
    with_sim: bool,
    seed: u64,
    steps: usize,
) -> f64 {
    let f = f_shared; // input dim per view equals shared dim; noise is additive
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixers: Vec<Array2<f64>> = (0..views)
        .map(|_| Array2::from_shape_fn((f, f_shared), |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let mut weights_e: Vec<ArrayD<f64>> = (0..views)
        .map(|_| ArrayD::from_shape_simple_fn(IxDyn(&[f, d]), || 0.5 * rng.gen_range(-1.0..1.0)))
        .collect();
    let mut biases: Vec<ArrayD<f64>> =
        (0..views).map(|_| ArrayD::from_shape_simple_fn(IxDyn(&[d]), || 0.1 * rng.gen_range(-1.0..1.0))).collect();
    let mut adam = Adam::new(AdamConfig { lr, weight_decay: 0.0, ..Default::default() });
    let lw = LossWeights::default();
    let mut last_var = f64::NAN;
    for _ in 0..steps {
        let shared = Array2::from_shape_fn((k, f_shared), |_| rng.gen_range(-1.0..1.0));
        let tape: Tape<f64> = Tape::new();
        let e_leaves: Vec<_> = weights_e.iter().map(|p| tape.param(p.clone())).collect();
        let b_leaves: Vec<_> = biases.iter().map(|p| tape.param(p.clone())).collect();
        let mut batches = Vec::new();
        let mut h_values = Vec::new();
        for v in 0..views {
            let mut x = shared.dot(&mixers[v].t());
            x.mapv_inplace(|t| t);
            let noise = Array2::from_shape_fn((k, f), |_| sigma * rng.gen_range(-1.0..1.0));
            let x = &x + &noise;
            let xt = tape.input(x.into_dyn());
            let h = xt.matmul(e_leaves[v]).add_bias(b_leaves[v]);
            h_values.push(h.to_array());
            let ids: Vec<u64> = (0..k as u64).collect();
            batches.push(ViewEmbeddingBatch::from_raw(format!("v{v}"), h, ids).unwrap());
        }
        last_var = batch_distance_variance(&h_values);
        let loss = if with_sim {
            coop_loss(&batches, &lw, SimilarityMetric::MappedCosine).unwrap().total
        } else {
            sync_loss(&batches, SimilarityMetric::MappedCosine).unwrap()
        };
        let grads = tape.backward(loss);
        adam.begin_step();
        for v in 0..views {
            if let Some(g) = grads.grad(e_leaves[v]) {
                adam.update(&format!("e{v}"), &mut weights_e[v], g);
            }
            if let Some(g) = grads.grad(b_leaves[v]) {
                adam.update(&format!("b{v}"), &mut biases[v], g);
            }
        }
    }
    last_var
}

fn main() {
    for &(v, k, d, fs) in &[(2, 8, 8, 8), (2, 8, 8, 4), (2, 16, 8, 8)] {
        for &sigma in &[0.3, 0.5, 1.0] {
            for &lr in &[0.01, 0.02, 0.05] {
                let mut line = format!("V={v} K={k:2} D={d} Fs={fs} sig={sigma:<3} lr={lr:<4}");
                for seed in 0..3 {
                    let sync_var = run(v, k, d, fs, sigma, lr, false, seed, 500);
                    let coop_var = run(v, k, d, fs, sigma, lr, true, seed, 500);
                    line += &format!("  [s{seed}] sync:{sync_var:.2e} coop:{coop_var:.2e}");
                }
                println!("{line}");
            }
        }
    }
}
