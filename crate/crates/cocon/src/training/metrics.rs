//! JSON-lines metrics log.

use crate::error::Result;
use crate::losses::LossReport;
use serde_json::{json, Map, Value};
use std::io::Write;
use std::path::Path;

/// Append-only training log; one flat JSON object per line. Step indices are
/// asserted monotone within a phase.
#[derive(Debug, Default, Clone)]
pub struct MetricsLog {
    lines: Vec<String>,
    last_step: Option<(String, u64)>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log_step(
        &mut self,
        phase: &str,
        view: Option<&str>,
        epoch: usize,
        step: u64,
        lr: f64,
        report: &LossReport,
    ) {
        if let Some((last_phase, last_step)) = &self.last_step {
            assert!(
                last_phase != phase || step > *last_step,
                "step indices must be monotone within a phase ({last_step} then {step})"
            );
        }
        self.last_step = Some((phase.to_string(), step));
        let mut obj = Map::new();
        obj.insert("kind".into(), json!("step"));
        obj.insert("phase".into(), json!(phase));
        if let Some(view) = view {
            obj.insert("view".into(), json!(view));
        }
        obj.insert("epoch".into(), json!(epoch));
        obj.insert("step".into(), json!(step));
        obj.insert("lr".into(), json!(lr));
        for (k, v) in report.to_flat_map() {
            obj.insert(k, json!(v));
        }
        self.push(Value::Object(obj));
    }

    pub fn log_val(&mut self, phase: &str, view: Option<&str>, epoch: usize, val_loss: f64) {
        let mut obj = Map::new();
        obj.insert("kind".into(), json!("val"));
        obj.insert("phase".into(), json!(phase));
        if let Some(view) = view {
            obj.insert("view".into(), json!(view));
        }
        obj.insert("epoch".into(), json!(epoch));
        obj.insert("val_loss".into(), json!(val_loss));
        self.push(Value::Object(obj));
    }

    pub fn log_lr_decay(&mut self, phase: &str, view: Option<&str>, epoch: usize, lr: f64) {
        let mut obj = Map::new();
        obj.insert("kind".into(), json!("lr_decay"));
        obj.insert("phase".into(), json!(phase));
        if let Some(view) = view {
            obj.insert("view".into(), json!(view));
        }
        obj.insert("epoch".into(), json!(epoch));
        obj.insert("lr".into(), json!(lr));
        self.push(Value::Object(obj));
    }

    /// Free-form scalar observation (e.g. tracked diagnostics).
    pub fn log_scalar(&mut self, phase: &str, key: &str, value: f64) {
        self.push(json!({"kind": "scalar", "phase": phase, "key": key, "value": value}));
    }

    fn push(&mut self, value: Value) {
        self.lines.push(serde_json::to_string(&value).expect("metrics serialize"));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.lines.extend(other.lines);
        if other.last_step.is_some() {
            self.last_step = other.last_step;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    /// Parsed copies of all records of one kind.
    pub fn records(&self, kind: &str) -> Vec<Value> {
        self.lines
            .iter()
            .filter_map(|l| serde_json::from_str::<Value>(l).ok())
            .filter(|v| v["kind"] == kind)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_records_carry_flat_loss_keys() {
        let mut log = MetricsLog::new();
        let mut report = LossReport::new(0.005, 1.0, 10.0);
        report.record_cpc("rgb", 3.2);
        report.set_total(3.2);
        log.log_step("phase1_cpc", Some("rgb"), 0, 1, 1e-3, &report);
        log.log_val("phase1_cpc", Some("rgb"), 0, 3.1);
        let steps = log.records("step");
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0]["cpc.rgb"], 3.2);
        assert_eq!(steps[0]["phase"], "phase1_cpc");
        assert_eq!(log.records("val")[0]["val_loss"], 3.1);
    }

    #[test]
    #[should_panic(expected = "monotone")]
    fn non_monotone_steps_panic() {
        let mut log = MetricsLog::new();
        let report = LossReport::new(0.005, 1.0, 10.0);
        log.log_step("p", None, 0, 5, 1e-3, &report);
        log.log_step("p", None, 0, 5, 1e-3, &report);
    }
}
