//! Central finite-difference gradient verification.

use super::tape::Tensor;
use super::Tape;
use ndarray::ArrayD;
use std::fmt;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, floor)
    pub max_rel_err: f64,
    /// (input index, flat coordinate, analytic, numeric) at the maximum
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err < rel_tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.worst {
            Some((input, coord, a, n)) => write!(
                f,
                "max rel err {:.3e} over {} coords (input {input} coord {coord}: analytic {a:.6e} vs numeric {n:.6e})",
                self.max_rel_err, self.coords_checked
            ),
            None => write!(f, "no differentiable coordinates checked"),
        }
    }
}

const REL_FLOOR: f64 = 1e-6;
/// Differences below this are numerically indistinguishable from zero for a
/// central difference in f64 and are not flagged.
const ABS_FLOOR: f64 = 1e-9;

/// Compare analytic gradients of `build` against central finite differences.
///
/// `build` must construct the scalar loss from leaf tensors created in the
/// order of `inputs`; it is re-invoked on a fresh tape for every probe, so it
/// must be a pure function of the leaf values.
pub fn check_gradients<F>(inputs: &[ArrayD<f64>], step: f64, build: F) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape<f64>, &[Tensor<'t, f64>]) -> Tensor<'t, f64>,
{
    let eval = |values: &[ArrayD<f64>]| -> f64 {
        let tape: Tape<f64> = Tape::inference();
        let leaves: Vec<_> = values.iter().map(|v| tape.param(v.clone())).collect();
        build(&tape, &leaves).item()
    };

    // Analytic pass.
    let tape: Tape<f64> = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let loss = build(&tape, &leaves);
    let grads = tape.backward(loss);
    let analytic: Vec<ArrayD<f64>> = leaves
        .iter()
        .map(|&l| {
            grads
                .grad(l)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(l.value().raw_dim()))
        })
        .collect();

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, coords_checked: 0 };
    let mut probe: Vec<ArrayD<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let a_flat = analytic[i].as_standard_layout().as_slice().unwrap().to_vec();
        for coord in 0..input.len() {
            let orig = probe[i].as_slice_mut().unwrap()[coord];
            probe[i].as_slice_mut().unwrap()[coord] = orig + step;
            let plus = eval(&probe);
            probe[i].as_slice_mut().unwrap()[coord] = orig - step;
            let minus = eval(&probe);
            probe[i].as_slice_mut().unwrap()[coord] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = a_flat[coord];
            let diff = (a - numeric).abs();
            if diff < ABS_FLOOR {
                report.coords_checked += 1;
                continue;
            }
            let rel = diff / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((i, coord, a, numeric));
            }
        }
    }
    report
}
