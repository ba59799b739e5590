//! Validation-plateau learning-rate schedule.

use super::config::PlateauConfig;

/// Mutable schedule state; serialized into checkpoints so resumed runs decay
/// at the same epochs as uninterrupted ones.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlateauState {
    pub best: f64,
    pub stale_epochs: usize,
    pub decays: usize,
}

impl Default for PlateauState {
    fn default() -> Self {
        PlateauState { best: f64::INFINITY, stale_epochs: 0, decays: 0 }
    }
}

pub struct PlateauSchedule {
    cfg: PlateauConfig,
    state: PlateauState,
}

impl PlateauSchedule {
    pub fn new(cfg: PlateauConfig) -> Self {
        PlateauSchedule { cfg, state: PlateauState::default() }
    }

    pub fn with_state(cfg: PlateauConfig, state: PlateauState) -> Self {
        PlateauSchedule { cfg, state }
    }

    pub fn state(&self) -> PlateauState {
        self.state
    }

    /// Feed one epoch's validation loss; returns the lr multiplier when a
    /// decay triggers. Improvement means beating the best by the relative
    /// threshold; a decay resets the patience counter.
    pub fn observe(&mut self, val_loss: f64) -> Option<f64> {
        if val_loss < self.state.best * (1.0 - self.cfg.rel_threshold) {
            self.state.best = val_loss;
            self.state.stale_epochs = 0;
            return None;
        }
        self.state.stale_epochs += 1;
        if self.state.stale_epochs >= self.cfg.patience && self.state.decays < self.cfg.max_decays
        {
            self.state.stale_epochs = 0;
            self.state.decays += 1;
            return Some(self.cfg.factor);
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PlateauConfig {
        PlateauConfig { patience: 3, factor: 0.1, rel_threshold: 1e-3, max_decays: 2 }
    }

    #[test]
    fn strictly_improving_never_decays() {
        let mut s = PlateauSchedule::new(cfg());
        for i in 0..10 {
            assert_eq!(s.observe(1.0 / (i + 1) as f64), None);
        }
    }

    #[test]
    fn flat_losses_decay_exactly_once_after_patience() {
        let mut s = PlateauSchedule::new(cfg());
        let mut decays = 0;
        for _ in 0..4 {
            if s.observe(1.0).is_some() {
                decays += 1;
            }
        }
        assert_eq!(decays, 1);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauSchedule::new(cfg());
        assert_eq!(s.observe(1.0), None);
        assert_eq!(s.observe(1.0), None); // stale 1
        assert_eq!(s.observe(1.0), None); // stale 2
        assert_eq!(s.observe(0.5), None); // improvement, reset
        assert_eq!(s.observe(0.5), None); // stale 1
        assert_eq!(s.observe(0.5), None); // stale 2
        assert_eq!(s.observe(0.5), Some(0.1)); // stale 3 -> decay
    }

    #[test]
    fn at_most_two_decays() {
        let mut s = PlateauSchedule::new(cfg());
        let mut decays = 0;
        for _ in 0..30 {
            if s.observe(2.0).is_some() {
                decays += 1;
            }
        }
        assert_eq!(decays, 2);
    }

    #[test]
    fn sub_threshold_improvement_counts_as_stale() {
        let mut s = PlateauSchedule::new(cfg());
        assert_eq!(s.observe(1.0), None);
        // 1e-4 relative improvement is below the 1e-3 threshold.
        assert_eq!(s.observe(0.9999), None);
        assert_eq!(s.observe(0.9998), None);
        assert!(s.observe(0.9997).is_some());
    }
}
