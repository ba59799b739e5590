//! Per-term loss record serialized as flat key -> value JSON.

use std::collections::BTreeMap;

/// Scalar values of every loss term in one step plus the weighting metadata.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    /// Per-view predictive loss, keyed by view id.
    pub cpc: BTreeMap<String, f64>,
    pub cpc_sum: f64,
    pub sync: Option<f64>,
    pub sim: Option<f64>,
    pub coop: Option<f64>,
    pub total: f64,
    pub tau: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub mu: Option<f64>,
}

impl LossReport {
    pub fn new(tau: f64, alpha: f64, lambda: f64) -> Self {
        LossReport {
            cpc: BTreeMap::new(),
            cpc_sum: 0.0,
            sync: None,
            sim: None,
            coop: None,
            total: 0.0,
            tau,
            alpha,
            lambda,
            mu: None,
        }
    }

    pub fn record_cpc(&mut self, view: &str, value: f64) {
        self.cpc.insert(view.to_string(), value);
        self.cpc_sum += value;
    }

    pub fn record_coop(&mut self, sync: f64, sim: f64, mu: f64, coop: f64) {
        self.sync = Some(sync);
        self.sim = Some(sim);
        self.mu = Some(mu);
        self.coop = Some(coop);
    }

    pub fn set_total(&mut self, total: f64) {
        self.total = total;
    }

    /// Flat `key -> float` map for the JSON-lines metrics log. Per-view
    /// predictive terms appear as `cpc.<view>`; absent terms are omitted.
    pub fn to_flat_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (view, v) in &self.cpc {
            m.insert(format!("cpc.{view}"), *v);
        }
        m.insert("cpc_sum".into(), self.cpc_sum);
        if let Some(v) = self.sync {
            m.insert("sync".into(), v);
        }
        if let Some(v) = self.sim {
            m.insert("sim".into(), v);
        }
        if let Some(v) = self.coop {
            m.insert("coop".into(), v);
        }
        if let Some(v) = self.mu {
            m.insert("mu".into(), v);
        }
        m.insert("total".into(), self.total);
        m.insert("tau".into(), self.tau);
        m.insert("alpha".into(), self.alpha);
        m.insert("lambda".into(), self.lambda);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_map_keys() {
        let mut r = LossReport::new(0.005, 1.0, 10.0);
        r.record_cpc("rgb", 1.5);
        r.record_cpc("flow", 2.0);
        r.record_coop(0.1, 0.2, 0.25, 0.3);
        r.set_total(6.5);
        let m = r.to_flat_map();
        assert_eq!(m["cpc.rgb"], 1.5);
        assert_eq!(m["cpc.flow"], 2.0);
        assert_eq!(m["cpc_sum"], 3.5);
        assert_eq!(m["coop"], 0.3);
        assert_eq!(m["total"], 6.5);
        assert_eq!(m["lambda"], 10.0);
        let line = serde_json::to_string(&m).unwrap();
        assert!(line.starts_with('{') && line.contains("\"cpc.rgb\":1.5"));
    }
}
