//! Adam with decoupled-from-nothing classic L2 weight decay.

use crate::tensor::Scalar;
use ndarray::ArrayD;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// Adam state over named parameters. Updates are elementwise and sequential,
/// so training is bit-reproducible.
pub struct Adam<S: Scalar> {
    cfg: AdamConfig,
    t: u64,
    state: BTreeMap<String, (ArrayD<S>, ArrayD<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, state: BTreeMap::new() }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Call once per optimization step, before the per-tensor updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Apply the update for one named parameter in place.
    pub fn update(&mut self, name: &str, param: &mut ArrayD<S>, grad: &ArrayD<S>) {
        debug_assert_eq!(param.shape(), grad.shape(), "grad shape mismatch for {name}");
        let (m, v) = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| (ArrayD::zeros(param.raw_dim()), ArrayD::zeros(param.raw_dim())));
        let b1 = S::cast(self.cfg.beta1);
        let b2 = S::cast(self.cfg.beta2);
        let one = S::one();
        let wd = S::cast(self.cfg.weight_decay);
        let eps = S::cast(self.cfg.eps);
        let corr1 = S::cast(1.0 - self.cfg.beta1.powi(self.t as i32));
        let corr2 = S::cast(1.0 - self.cfg.beta2.powi(self.t as i32));
        let lr = S::cast(self.cfg.lr);

        let ps = param.as_slice_mut().expect("params are standard layout");
        let gs = grad.as_standard_layout();
        let gs = gs.as_slice().unwrap();
        let ms = m.as_slice_mut().unwrap();
        let vs = v.as_slice_mut().unwrap();
        for i in 0..ps.len() {
            let g = gs[i] + wd * ps[i];
            ms[i] = b1 * ms[i] + (one - b1) * g;
            vs[i] = b2 * vs[i] + (one - b2) * g * g;
            let mhat = ms[i] / corr1;
            let vhat = vs[i] / corr2;
            ps[i] = ps[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn set_step_count(&mut self, t: u64) {
        self.t = t;
    }

    /// Moment arrays for checkpointing, in name order.
    pub fn state_entries(&self) -> impl Iterator<Item = (&String, &(ArrayD<S>, ArrayD<S>))> {
        self.state.iter()
    }

    pub fn restore_entry(&mut self, name: String, m: ArrayD<S>, v: ArrayD<S>) {
        self.state.insert(name, (m, v));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn quadratic_converges() {
        // min (x - 3)^2
        let mut x = ArrayD::from_elem(IxDyn(&[1]), 0.0f64);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() });
        for _ in 0..300 {
            let g = x.mapv(|v| 2.0 * (v - 3.0));
            adam.begin_step();
            adam.update("x", &mut x, &g);
        }
        assert!((x[[0]] - 3.0).abs() < 1e-3, "got {}", x[[0]]);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut x = ArrayD::from_elem(IxDyn(&[4]), 1.0f32);
            let mut adam = Adam::new(AdamConfig::default());
            for s in 0..50 {
                let g = x.mapv(|v| v * 0.3 + s as f32 * 0.01);
                adam.begin_step();
                adam.update("x", &mut x, &g);
            }
            x
        };
        assert_eq!(run(), run());
    }
}
