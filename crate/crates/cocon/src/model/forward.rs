//! Forward graphs of a bound view model.

use super::{EncoderSpec, ViewModel};
use crate::error::{CoconError, Result};
use crate::tensor::{concat, conv3d, Conv3dSpec, Scalar, Tape, Tensor};
use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;

/// Train/eval switch plus the dropout rng. Eval mode is deterministic.
pub struct ForwardCtx<'r> {
    pub train: bool,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> ForwardCtx<'r> {
    pub fn eval() -> Self {
        ForwardCtx { train: false, rng: None }
    }

    pub fn train(rng: &'r mut ChaCha8Rng) -> Self {
        ForwardCtx { train: true, rng: Some(rng) }
    }
}

/// A view model's parameters as tape leaves.
pub struct BoundViewModel<'t, S: Scalar> {
    pub spec: EncoderSpec,
    enc: Vec<(Tensor<'t, S>, Tensor<'t, S>, Conv3dSpec)>,
    wx: Tensor<'t, S>,
    wh: Tensor<'t, S>,
    b_ih: Tensor<'t, S>,
    b_hh: Tensor<'t, S>,
    w1: Tensor<'t, S>,
    b1: Tensor<'t, S>,
    w2: Tensor<'t, S>,
    b2: Tensor<'t, S>,
    /// `(name, leaf)` in [`ViewModel::visit_params`] order.
    pub params: Vec<(String, Tensor<'t, S>)>,
}

/// Everything the losses need from one view's forward pass.
pub struct ViewForward<'t, S: Scalar> {
    /// Rollout predictions `(B, S, H', W', D)`.
    pub predicted: Tensor<'t, S>,
    /// Encoder outputs for the same future blocks.
    pub target: Tensor<'t, S>,
    /// Pooled per-block embeddings `(B, N, D)` (pre-normalization).
    pub block_embeddings: Tensor<'t, S>,
    /// Mean of the pooled block embeddings `(B, D)`; one row per clip.
    pub instance_embedding: Tensor<'t, S>,
    /// Spatially max-pooled context after consuming the context blocks `(B, D)`.
    pub context: Tensor<'t, S>,
}

fn cast_leaf<'t, S: Scalar>(tape: &'t Tape<S>, p: &ArrayD<f32>) -> Tensor<'t, S> {
    tape.param(p.mapv(|v| S::cast(v as f64)))
}

impl ViewModel {
    /// Put every parameter on the tape as a gradient-carrying leaf.
    pub fn bind<'t, S: Scalar>(&self, tape: &'t Tape<S>) -> BoundViewModel<'t, S> {
        let mut params = Vec::new();
        let mut enc = Vec::new();
        for (i, layer) in self.enc.iter().enumerate() {
            let k = cast_leaf(tape, &layer.kernel);
            let b = cast_leaf(tape, &layer.bias);
            params.push((format!("enc{i}.kernel"), k));
            params.push((format!("enc{i}.bias"), b));
            enc.push((k, b, layer.conv));
        }
        let wx = cast_leaf(tape, &self.gru.wx);
        let wh = cast_leaf(tape, &self.gru.wh);
        let b_ih = cast_leaf(tape, &self.gru.b_ih);
        let b_hh = cast_leaf(tape, &self.gru.b_hh);
        params.push(("gru.wx".into(), wx));
        params.push(("gru.wh".into(), wh));
        params.push(("gru.b_ih".into(), b_ih));
        params.push(("gru.b_hh".into(), b_hh));
        let w1 = cast_leaf(tape, &self.pred.w1);
        let b1 = cast_leaf(tape, &self.pred.b1);
        let w2 = cast_leaf(tape, &self.pred.w2);
        let b2 = cast_leaf(tape, &self.pred.b2);
        params.push(("pred.w1".into(), w1));
        params.push(("pred.b1".into(), b1));
        params.push(("pred.w2".into(), w2));
        params.push(("pred.b2".into(), b2));
        BoundViewModel {
            spec: self.spec.clone(),
            enc,
            wx,
            wh,
            b_ih,
            b_hh,
            w1,
            b1,
            w2,
            b2,
            params,
        }
    }
}

impl<'t, S: Scalar> BoundViewModel<'t, S> {
    /// Encode `(B, N, K, H, W, C)` blocks to latent maps `(B, N, H', W', D)`.
    /// Deterministic; the encoder has no stochastic pieces.
    pub fn encode_blocks(&self, blocks: Tensor<'t, S>) -> Result<Tensor<'t, S>> {
        let shape = blocks.shape();
        if shape.len() != 6 {
            return Err(CoconError::contract(format!(
                "encode_blocks expects (B,N,K,H,W,C), got {shape:?}"
            )));
        }
        let (b, n, k, h, w, c) = (shape[0], shape[1], shape[2], shape[3], shape[4], shape[5]);
        if c != self.spec.in_channels {
            return Err(CoconError::contract(format!(
                "view {} expects {} channels, got {c}",
                self.spec.view, self.spec.in_channels
            )));
        }
        let mut x = blocks.reshape(&[b * n, k, h, w, c]);
        // The last conv stays linear so latent fibers spread over the whole
        // sphere; an all-positive embedding space caps cosine distances at
        // 1/2 and stalls the cross-view hinge.
        let layers = self.enc.len();
        for (i, (kernel, bias, conv)) in self.enc.iter().enumerate() {
            x = conv3d(x, *kernel, *bias, *conv);
            if i + 1 < layers {
                x = x.relu();
            }
        }
        // Collapse the temporal axis; one latent map per block.
        let x = x.mean_axis(1);
        let xs = x.shape();
        Ok(x.reshape(&[b, n, xs[1], xs[2], xs[3]]))
    }

    /// One recurrent step over flattened spatial positions. `x` is `(R, D)`,
    /// `h` is `(R, H)`. Hidden-state dropout applies in training mode when
    /// computing the gates; the carried state itself is not masked.
    pub fn gru_cell(
        &self,
        x: Tensor<'t, S>,
        h: Tensor<'t, S>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Tensor<'t, S> {
        let hd = self.spec.agg_dim;
        let h_in = if ctx.train && self.spec.dropout > 0.0 {
            let rng = ctx.rng.as_mut().expect("training forward needs an rng");
            h.dropout(self.spec.dropout, rng)
        } else {
            h
        };
        let gx = x.matmul(self.wx).add_bias(self.b_ih);
        let gh = h_in.matmul(self.wh).add_bias(self.b_hh);
        let r = gx.narrow(1, 0, hd).add(gh.narrow(1, 0, hd)).sigmoid();
        let u = gx.narrow(1, hd, hd).add(gh.narrow(1, hd, hd)).sigmoid();
        let n = gx
            .narrow(1, 2 * hd, hd)
            .add(r.multiply(gh.narrow(1, 2 * hd, hd)))
            .tanh();
        let one = S::one();
        u.affine(-one, one).multiply(n).add(u.multiply(h))
    }

    /// Run the aggregator over blocks `0..upto`, returning the hidden map
    /// (flattened spatial, `(B*P, H)`) after every step. Causal by
    /// construction: step `t` sees blocks `0..=t` only.
    pub fn aggregate(
        &self,
        z_all: Tensor<'t, S>,
        upto: usize,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Vec<Tensor<'t, S>>> {
        let shape = z_all.shape();
        let (b, n, hp, wp, d) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
        if upto == 0 || upto > n {
            return Err(CoconError::contract(format!(
                "aggregate needs 1..={n} steps, got {upto}"
            )));
        }
        let r = b * hp * wp;
        let tape = z_all.tape();
        let mut h = tape.input(ArrayD::zeros(ndarray::IxDyn(&[r, self.spec.agg_dim])));
        let mut out = Vec::with_capacity(upto);
        for t in 0..upto {
            let x = z_all.narrow(1, t, 1).reshape(&[r, d]);
            h = self.gru_cell(x, h, ctx);
            out.push(h);
        }
        Ok(out)
    }

    /// The future predictor, applied per spatial position.
    pub fn predict_latent(&self, h: Tensor<'t, S>) -> Tensor<'t, S> {
        h.matmul(self.w1).add_bias(self.b1).relu().matmul(self.w2).add_bias(self.b2)
    }

    /// Autoregressive rollout: the first prediction comes straight from the
    /// context, every further one feeds the previous prediction back through
    /// the aggregator.
    pub fn rollout_predict(
        &self,
        hidden: Tensor<'t, S>,
        steps: usize,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Vec<Tensor<'t, S>>> {
        if steps == 0 {
            return Err(CoconError::contract("rollout needs at least one step"));
        }
        if steps > self.spec.max_pred_steps {
            return Err(CoconError::contract(format!(
                "rollout of {steps} steps exceeds configured maximum {}",
                self.spec.max_pred_steps
            )));
        }
        let mut h = hidden;
        let mut out = Vec::with_capacity(steps);
        let mut z = self.predict_latent(h);
        out.push(z);
        for _ in 1..steps {
            h = self.gru_cell(z, h, ctx);
            z = self.predict_latent(h);
            out.push(z);
        }
        Ok(out)
    }

    /// Spatial max pool of a hidden map back in `(B, H', W', D)` layout.
    fn pool_hidden(&self, h: Tensor<'t, S>, b: usize, hp: usize, wp: usize) -> Tensor<'t, S> {
        h.reshape(&[b, hp, wp, self.spec.agg_dim]).global_spatial_max()
    }

    /// Full pass for one view: encode all blocks, aggregate the context
    /// blocks, roll out predictions for the rest, and pool instance
    /// embeddings for the cross-view losses.
    pub fn full_forward(
        &self,
        blocks: Tensor<'t, S>,
        pred_steps: usize,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ViewForward<'t, S>> {
        let z_all = self.encode_blocks(blocks)?;
        let shape = z_all.shape();
        let (b, n, hp, wp, d) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
        if pred_steps >= n {
            return Err(CoconError::contract(format!(
                "cannot predict {pred_steps} of {n} blocks; need at least one context block"
            )));
        }
        let n_ctx = n - pred_steps;
        let hiddens = self.aggregate(z_all, n_ctx, ctx)?;
        let last = *hiddens.last().unwrap();
        let preds = self.rollout_predict(last, pred_steps, ctx)?;
        let stacked: Vec<Tensor<'t, S>> =
            preds.iter().map(|p| p.reshape(&[b, 1, hp, wp, d])).collect();
        let predicted = concat(1, &stacked);
        let target = z_all.narrow(1, n_ctx, pred_steps);

        let pooled = z_all
            .reshape(&[b * n, hp, wp, d])
            .global_spatial_max()
            .reshape(&[b, n, d]);
        let instance = pooled.mean_axis(1);
        let context = self.pool_hidden(last, b, hp, wp);
        Ok(ViewForward {
            predicted,
            target,
            block_embeddings: pooled,
            instance_embedding: instance,
            context,
        })
    }

    /// Context vector after consuming `upto` blocks; the clip-level feature
    /// used by evaluation and analysis.
    pub fn context_vector(
        &self,
        blocks: Tensor<'t, S>,
        upto: usize,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Tensor<'t, S>> {
        let z_all = self.encode_blocks(blocks)?;
        let shape = z_all.shape();
        let (b, hp, wp) = (shape[0], shape[2], shape[3]);
        let hiddens = self.aggregate(z_all, upto, ctx)?;
        Ok(self.pool_hidden(*hiddens.last().unwrap(), b, hp, wp))
    }

    /// Pooled per-block embeddings `(B, N, D)` without running the aggregator.
    pub fn block_embeddings(&self, blocks: Tensor<'t, S>) -> Result<Tensor<'t, S>> {
        let z_all = self.encode_blocks(blocks)?;
        let shape = z_all.shape();
        let (b, n, hp, wp, d) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
        Ok(z_all
            .reshape(&[b * n, hp, wp, d])
            .global_spatial_max()
            .reshape(&[b, n, d]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ViewKind;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};

    fn small_model() -> ViewModel {
        let mut spec = EncoderSpec::new(ViewKind::Rgb, 8, 2, 4);
        spec.max_pred_steps = 3;
        ViewModel::init(spec, 42).unwrap()
    }

    fn rand_blocks(b: usize, n: usize, k: usize, s: usize, c: usize, seed: u64) -> ArrayD<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_simple_fn(IxDyn(&[b, n, k, s, s, c]), || rng.gen_range(0.0..1.0))
    }

    #[test]
    fn zero_input_gives_zero_latents() {
        let model = small_model();
        let tape: Tape<f32> = Tape::inference();
        let bound = model.bind(&tape);
        let blocks = tape.input(ArrayD::zeros(IxDyn(&[1, 2, 3, 16, 16, 3])));
        let z = bound.encode_blocks(blocks).unwrap();
        assert!(z.to_array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn desk_default_latent_shape_is_4x4() {
        // K=5 frames at 64x64 through the depth-4 stack.
        let spec = EncoderSpec::new(ViewKind::Rgb, 16, 4, 4);
        let model = ViewModel::init(spec, 1).unwrap();
        let tape: Tape<f32> = Tape::inference();
        let bound = model.bind(&tape);
        let blocks = tape.input(ArrayD::zeros(IxDyn(&[1, 1, 5, 64, 64, 3])));
        let z = bound.encode_blocks(blocks).unwrap();
        assert_eq!(z.shape(), vec![1, 1, 4, 4, 16]);
    }

    #[test]
    fn identical_blocks_encode_identically() {
        let model = small_model();
        let tape: Tape<f32> = Tape::inference();
        let bound = model.bind(&tape);
        let one = rand_blocks(1, 1, 3, 16, 3, 9);
        let mut two = ArrayD::zeros(IxDyn(&[1, 2, 3, 16, 16, 3]));
        for n in 0..2 {
            two.slice_mut(ndarray::s![0, n, .., .., .., ..])
                .assign(&one.slice(ndarray::s![0, 0, .., .., .., ..]));
        }
        let z = bound.encode_blocks(tape.input(two)).unwrap().to_array();
        let z0 = z.slice(ndarray::s![0, 0, .., .., ..]).to_owned();
        let z1 = z.slice(ndarray::s![0, 1, .., .., ..]).to_owned();
        assert_eq!(z0, z1);
    }

    #[test]
    fn aggregator_is_causal() {
        let model = small_model();
        let blocks = rand_blocks(1, 3, 3, 16, 3, 10);
        let mut perturbed = blocks.clone();
        perturbed[[0, 2, 0, 0, 0, 0]] += 10.0;

        let run = |input: &ArrayD<f32>| -> Vec<ArrayD<f32>> {
            let tape: Tape<f32> = Tape::inference();
            let bound = model.bind(&tape);
            let z = bound.encode_blocks(tape.input(input.clone())).unwrap();
            bound
                .aggregate(z, 3, &mut ForwardCtx::eval())
                .unwrap()
                .iter()
                .map(|h| h.to_array())
                .collect()
        };
        let a = run(&blocks);
        let b = run(&perturbed);
        // c_1 and c_2 must be bit-identical; c_3 must differ.
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert_ne!(a[2], b[2]);
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let model = small_model();
        let blocks = rand_blocks(1, 2, 3, 16, 3, 11);
        let eval = |_: u64| {
            let tape: Tape<f32> = Tape::inference();
            let bound = model.bind(&tape);
            let z = bound.encode_blocks(tape.input(blocks.clone())).unwrap();
            bound.aggregate(z, 2, &mut ForwardCtx::eval()).unwrap()[1].to_array()
        };
        // Eval mode is bit-reproducible.
        assert_eq!(eval(0), eval(1));

        let train = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tape: Tape<f32> = Tape::new();
            let bound = model.bind(&tape);
            let z = bound.encode_blocks(tape.input(blocks.clone())).unwrap();
            bound.aggregate(z, 2, &mut ForwardCtx::train(&mut rng)).unwrap()[1].to_array()
        };
        assert_ne!(train(0), eval(0), "dropout must be active in training mode");
        assert_eq!(train(7), train(7), "training is deterministic given the rng seed");
    }

    #[test]
    fn rollout_single_step_is_one_predictor_application() {
        let model = small_model();
        let tape: Tape<f32> = Tape::inference();
        let bound = model.bind(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = tape.input(ArrayD::from_shape_simple_fn(IxDyn(&[8, 8]), || {
            rng.gen_range(-1.0f32..1.0)
        }));
        let roll = bound.rollout_predict(h, 1, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(roll.len(), 1);
        assert_eq!(roll[0].to_array(), bound.predict_latent(h).to_array());
    }

    #[test]
    fn rollout_feeds_predictions_back() {
        let model = small_model();
        let tape: Tape<f32> = Tape::inference();
        let bound = model.bind(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = tape.input(ArrayD::from_shape_simple_fn(IxDyn(&[8, 8]), || {
            rng.gen_range(-1.0f32..1.0)
        }));
        let mut ctx = ForwardCtx::eval();
        let roll = bound.rollout_predict(h, 2, &mut ctx).unwrap();
        // Recompute step 2 with a corrupted first prediction; it must differ.
        let z1 = bound.predict_latent(h);
        let corrupted = z1.affine(1.0, 0.5);
        let h2 = bound.gru_cell(corrupted, h, &mut ctx);
        let z2_corrupted = bound.predict_latent(h2);
        assert_ne!(roll[1].to_array(), z2_corrupted.to_array());
    }

    #[test]
    fn rollout_beyond_max_steps_errors() {
        let model = small_model();
        let tape: Tape<f32> = Tape::inference();
        let bound = model.bind(&tape);
        let h = tape.input(ArrayD::zeros(IxDyn(&[4, 8])));
        assert!(bound.rollout_predict(h, 4, &mut ForwardCtx::eval()).is_err());
    }

    #[test]
    fn full_forward_shapes_and_pool_identity() {
        let model = small_model();
        let tape: Tape<f32> = Tape::new();
        let bound = model.bind(&tape);
        let blocks = tape.input(rand_blocks(2, 3, 3, 16, 3, 14));
        let fwd = bound.full_forward(blocks, 1, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(fwd.predicted.shape(), vec![2, 1, 4, 4, 8]);
        assert_eq!(fwd.target.shape(), vec![2, 1, 4, 4, 8]);
        assert_eq!(fwd.block_embeddings.shape(), vec![2, 3, 8]);
        assert_eq!(fwd.instance_embedding.shape(), vec![2, 8]);
        assert_eq!(fwd.context.shape(), vec![2, 8]);

        // Stacked max pool identity: pooled[d] = max over (h,w) of z[h,w,d].
        let z = bound.encode_blocks(blocks).unwrap().to_array();
        let pooled = fwd.block_embeddings.to_array();
        for b in 0..2 {
            for n in 0..3 {
                for d in 0..8 {
                    let mut max = f32::NEG_INFINITY;
                    for y in 0..4 {
                        for x in 0..4 {
                            max = max.max(z[[b, n, y, x, d]]);
                        }
                    }
                    assert_eq!(pooled[[b, n, d]], max);
                }
            }
        }
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let model = small_model();
        let tape: Tape<f32> = Tape::inference();
        let bound = model.bind(&tape);
        let blocks = tape.input(ArrayD::zeros(IxDyn(&[1, 2, 3, 16, 16, 2])));
        assert!(bound.encode_blocks(blocks).is_err());
    }
}
