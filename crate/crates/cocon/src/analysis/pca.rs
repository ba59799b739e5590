//! 2-d principal-component projection for quick-look plots.

use crate::error::{CoconError, Result};
use ndarray::{Array1, Array2};

/// Project rows of `vectors` onto their top two principal components via
/// power iteration with deflation. Deterministic.
pub fn project_2d(vectors: &Array2<f32>) -> Result<Array2<f64>> {
    let (n, d) = vectors.dim();
    if n < 3 || d < 2 {
        return Err(CoconError::contract(format!(
            "PCA needs >= 3 vectors of dim >= 2, got {n} x {d}"
        )));
    }
    let x = vectors.mapv(|v| v as f64);
    let mean = x.sum_axis(ndarray::Axis(0)) / n as f64;
    let centered = &x - &mean.broadcast((n, d)).unwrap();
    let mut cov = centered.t().dot(&centered) / (n - 1) as f64;

    let mut components: Vec<Array1<f64>> = Vec::new();
    for k in 0..2 {
        // Deterministic start: basis vector offset per component.
        let mut v = Array1::<f64>::zeros(d);
        v[k % d] = 1.0;
        v[(k + 1) % d] = 0.5;
        for _ in 0..200 {
            let mut next = cov.dot(&v);
            let norm = next.dot(&next).sqrt();
            if norm < 1e-12 {
                break;
            }
            next /= norm;
            v = next;
        }
        // Deflate.
        let lambda = v.dot(&cov.dot(&v));
        let outer = {
            let mut m = Array2::<f64>::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    m[[i, j]] = v[i] * v[j] * lambda;
                }
            }
            m
        };
        cov -= &outer;
        components.push(v);
    }

    let mut out = Array2::<f64>::zeros((n, 2));
    for i in 0..n {
        for (k, comp) in components.iter().enumerate() {
            out[[i, k]] = centered.row(i).dot(comp);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_dominant_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Points spread along (1, 1, 0)/sqrt(2) with small noise.
        let mut data = Array2::<f32>::zeros((60, 3));
        for mut row in data.rows_mut() {
            let t: f32 = rng.gen_range(-3.0..3.0);
            row[0] = t + rng.gen_range(-0.05..0.05);
            row[1] = t + rng.gen_range(-0.05..0.05);
            row[2] = rng.gen_range(-0.05..0.05);
        }
        let proj = project_2d(&data).unwrap();
        // First component carries almost all the variance.
        let var0: f64 = proj.column(0).iter().map(|v| v * v).sum();
        let var1: f64 = proj.column(1).iter().map(|v| v * v).sum();
        assert!(var0 > 50.0 * var1, "var0 {var0} var1 {var1}");
    }

    #[test]
    fn projection_is_deterministic() {
        let data = Array2::from_shape_fn((10, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f32);
        assert_eq!(project_2d(&data).unwrap(), project_2d(&data).unwrap());
    }
}
