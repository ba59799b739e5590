//! Per-view models: 3-d conv encoder, convolutional recurrent aggregator
//! with 1x1 kernels, and the two-layer perceptron future predictor.
//!
//! Parameters live as plain `f32` arrays; [`ViewModel::bind`] casts them onto
//! a tape (in `f32` for training, `f64` for gradient checks) and the bound
//! model runs the forward graph.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, LoadedCheckpoint};
pub use forward::{BoundViewModel, ForwardCtx, ViewForward};

use crate::data::ViewKind;
use crate::error::{CoconError, Result};
use crate::tensor::Conv3dSpec;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use std::collections::BTreeMap;

/// Architecture of one view's composite encoder.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderSpec {
    pub view: ViewKind,
    pub in_channels: usize,
    /// Channel count of the first conv layer; doubles per layer up to
    /// `embed_dim`.
    pub width: usize,
    /// Number of stride-2 conv layers; each halves the spatial size.
    pub depth: usize,
    pub embed_dim: usize,
    /// Aggregator hidden size; the cross-view losses require it to equal
    /// `embed_dim`, which is also what the predictor assumes.
    pub agg_dim: usize,
    /// Hidden-state dropout probability, training mode only.
    pub dropout: f64,
    /// Upper bound on rollout length.
    pub max_pred_steps: usize,
}

impl EncoderSpec {
    pub fn new(view: ViewKind, embed_dim: usize, depth: usize, width: usize) -> Self {
        EncoderSpec {
            view,
            in_channels: view.channels(),
            width,
            depth,
            embed_dim,
            agg_dim: embed_dim,
            dropout: 0.1,
            max_pred_steps: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.embed_dim == 0 {
            return Err(CoconError::Config(format!("degenerate encoder spec {self:?}")));
        }
        if self.agg_dim != self.embed_dim {
            return Err(CoconError::Config(
                "aggregator hidden size must equal the embedding size".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoconError::Config(format!("dropout {} out of [0,1)", self.dropout)));
        }
        Ok(())
    }

    /// Channel counts of the conv stack, ending at `embed_dim`.
    pub fn channel_schedule(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| {
                if i + 1 == self.depth {
                    self.embed_dim
                } else {
                    (self.width << i).min(self.embed_dim)
                }
            })
            .collect()
    }

    /// Spatial size of the latent map for a given input size.
    pub fn latent_size(&self, input: usize) -> usize {
        let mut s = input;
        for _ in 0..self.depth {
            s = (s + 2 - 3) / 2 + 1;
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernel: ArrayD<f32>,
    pub bias: ArrayD<f32>,
    pub conv: Conv3dSpec,
}

#[derive(Clone, Debug)]
pub struct GruParams {
    /// Input projection `(D, 3H)` for the reset/update/candidate gates.
    pub wx: ArrayD<f32>,
    /// Hidden projection `(H, 3H)`.
    pub wh: ArrayD<f32>,
    pub b_ih: ArrayD<f32>,
    pub b_hh: ArrayD<f32>,
}

#[derive(Clone, Debug)]
pub struct MlpParams {
    pub w1: ArrayD<f32>,
    pub b1: ArrayD<f32>,
    pub w2: ArrayD<f32>,
    pub b2: ArrayD<f32>,
}

/// One view's parameters.
#[derive(Clone, Debug)]
pub struct ViewModel {
    pub spec: EncoderSpec,
    pub enc: Vec<ConvLayer>,
    pub gru: GruParams,
    pub pred: MlpParams,
}

impl ViewModel {
    /// Fresh parameters, deterministic in `seed`.
    pub fn init(spec: EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Vec::new();
        let mut c_in = spec.in_channels;
        for c_out in spec.channel_schedule() {
            let fan_in = 27 * c_in;
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            let kernel = ArrayD::from_shape_simple_fn(IxDyn(&[3, 3, 3, c_in, c_out]), || {
                normal.sample(&mut rng) as f32
            });
            enc.push(ConvLayer {
                kernel,
                bias: ArrayD::zeros(IxDyn(&[c_out])),
                conv: Conv3dSpec::k3(2),
            });
            c_in = c_out;
        }
        let d = spec.embed_dim;
        let h = spec.agg_dim;
        let bound = 1.0 / (h as f64).sqrt();
        let uni = Uniform::new(-bound, bound);
        let gru = GruParams {
            wx: ArrayD::from_shape_simple_fn(IxDyn(&[d, 3 * h]), || uni.sample(&mut rng) as f32),
            wh: ArrayD::from_shape_simple_fn(IxDyn(&[h, 3 * h]), || uni.sample(&mut rng) as f32),
            b_ih: ArrayD::zeros(IxDyn(&[3 * h])),
            b_hh: ArrayD::zeros(IxDyn(&[3 * h])),
        };
        let he1 = Normal::new(0.0, (2.0 / h as f64).sqrt()).unwrap();
        let he2 = Normal::new(0.0, (1.0 / d as f64).sqrt()).unwrap();
        let pred = MlpParams {
            w1: ArrayD::from_shape_simple_fn(IxDyn(&[h, d]), || he1.sample(&mut rng) as f32),
            b1: ArrayD::zeros(IxDyn(&[d])),
            w2: ArrayD::from_shape_simple_fn(IxDyn(&[d, d]), || he2.sample(&mut rng) as f32),
            b2: ArrayD::zeros(IxDyn(&[d])),
        };
        Ok(ViewModel { spec, enc, gru, pred })
    }

    /// Canonical parameter walk; binding, checkpoints and the optimizer all
    /// rely on this order.
    pub fn visit_params(&self, mut f: impl FnMut(String, &ArrayD<f32>)) {
        for (i, layer) in self.enc.iter().enumerate() {
            f(format!("enc{i}.kernel"), &layer.kernel);
            f(format!("enc{i}.bias"), &layer.bias);
        }
        f("gru.wx".into(), &self.gru.wx);
        f("gru.wh".into(), &self.gru.wh);
        f("gru.b_ih".into(), &self.gru.b_ih);
        f("gru.b_hh".into(), &self.gru.b_hh);
        f("pred.w1".into(), &self.pred.w1);
        f("pred.b1".into(), &self.pred.b1);
        f("pred.w2".into(), &self.pred.w2);
        f("pred.b2".into(), &self.pred.b2);
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(String, &mut ArrayD<f32>)) {
        for (i, layer) in self.enc.iter_mut().enumerate() {
            f(format!("enc{i}.kernel"), &mut layer.kernel);
            f(format!("enc{i}.bias"), &mut layer.bias);
        }
        f("gru.wx".into(), &mut self.gru.wx);
        f("gru.wh".into(), &mut self.gru.wh);
        f("gru.b_ih".into(), &mut self.gru.b_ih);
        f("gru.b_hh".into(), &mut self.gru.b_hh);
        f("pred.w1".into(), &mut self.pred.w1);
        f("pred.b1".into(), &mut self.pred.b1);
        f("pred.w2".into(), &mut self.pred.w2);
        f("pred.b2".into(), &mut self.pred.b2);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(|_, p| n += p.len());
        n
    }
}

/// All views of one experiment. Views share no parameters.
#[derive(Clone, Debug)]
pub struct MultiViewModel {
    pub views: BTreeMap<ViewKind, ViewModel>,
}

impl MultiViewModel {
    /// One independently seeded model per view. Per-view seeds are derived
    /// from the global seed and the view's name, so adding or reordering
    /// views does not perturb the others.
    pub fn init(specs: &[EncoderSpec], seed: u64) -> Result<Self> {
        let mut views = BTreeMap::new();
        for spec in specs {
            let view_seed = seed ^ view_seed_tag(spec.view);
            let view = spec.view;
            if views.insert(view, ViewModel::init(spec.clone(), view_seed)?).is_some() {
                return Err(CoconError::Config(format!("duplicate view {view}")));
            }
        }
        Ok(MultiViewModel { views })
    }

    pub fn view(&self, kind: ViewKind) -> Result<&ViewModel> {
        self.views
            .get(&kind)
            .ok_or_else(|| CoconError::NotFound(format!("no model for view {kind}")))
    }

    pub fn kinds(&self) -> Vec<ViewKind> {
        self.views.keys().copied().collect()
    }

    /// Walk all parameters as `view.<name>.<param>`.
    pub fn visit_params(&self, mut f: impl FnMut(String, &ArrayD<f32>)) {
        for (kind, model) in &self.views {
            model.visit_params(|name, p| f(format!("view.{kind}.{name}"), p));
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(String, &mut ArrayD<f32>)) {
        for (kind, model) in &mut self.views {
            model.visit_params_mut(|name, p| f(format!("view.{kind}.{name}"), p));
        }
    }
}

pub(crate) fn view_seed_tag(view: ViewKind) -> u64 {
    match view {
        ViewKind::Rgb => 0x52_47_42,
        ViewKind::Flow => 0x46_4c_4f57,
        ViewKind::Mask => 0x4d_41_534b,
        ViewKind::Heatmap => 0x48_45_4154,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_schedule_ends_at_embed_dim() {
        let spec = EncoderSpec::new(ViewKind::Rgb, 32, 3, 8);
        assert_eq!(spec.channel_schedule(), vec![8, 16, 32]);
        let spec = EncoderSpec::new(ViewKind::Rgb, 32, 4, 8);
        assert_eq!(spec.channel_schedule(), vec![8, 16, 32, 32]);
    }

    #[test]
    fn latent_size_halves_per_layer() {
        let spec = EncoderSpec::new(ViewKind::Rgb, 32, 3, 8);
        assert_eq!(spec.latent_size(32), 4);
        let spec = EncoderSpec::new(ViewKind::Rgb, 32, 4, 8);
        assert_eq!(spec.latent_size(64), 4);
    }

    #[test]
    fn init_is_deterministic_and_view_isolated() {
        let specs = [
            EncoderSpec::new(ViewKind::Rgb, 16, 2, 4),
            EncoderSpec::new(ViewKind::Flow, 16, 2, 4),
        ];
        let a = MultiViewModel::init(&specs, 7).unwrap();
        let b = MultiViewModel::init(&specs, 7).unwrap();
        let mut pa = Vec::new();
        a.visit_params(|n, p| pa.push((n, p.clone())));
        let mut pb = Vec::new();
        b.visit_params(|n, p| pb.push((n, p.clone())));
        assert_eq!(pa.len(), pb.len());
        for ((na, va), (nb, vb)) in pa.iter().zip(&pb) {
            assert_eq!(na, nb);
            assert_eq!(va, vb);
        }
        // Single-view init equals the same view inside a multi-view init.
        let solo = MultiViewModel::init(&specs[..1], 7).unwrap();
        let mut solo_params = Vec::new();
        solo.visit_params(|n, p| solo_params.push((n, p.clone())));
        let rgb_subset: Vec<_> = pa.into_iter().filter(|(n, _)| n.contains("rgb")).collect();
        assert_eq!(solo_params.len(), rgb_subset.len());
        for ((na, va), (nb, vb)) in solo_params.iter().zip(&rgb_subset) {
            assert_eq!(na, nb);
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn mismatched_agg_dim_rejected() {
        let mut spec = EncoderSpec::new(ViewKind::Rgb, 16, 2, 4);
        spec.agg_dim = 8;
        assert!(ViewModel::init(spec, 0).is_err());
    }
}
