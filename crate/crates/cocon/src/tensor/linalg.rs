//! Matrix multiply with deterministic row-chunk parallelism.

use super::Scalar;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;

/// Below this many multiply-adds a single-threaded gemm wins.
const PAR_THRESHOLD: usize = 1 << 19;

/// `a (m,k) · b (k,n)`. Large products are split into fixed row chunks and
/// dispatched on rayon; the chunking does not depend on the thread count, so
/// results are bit-identical however many workers run.
pub fn par_matmul<S: Scalar>(a: ArrayView2<'_, S>, b: ArrayView2<'_, S>) -> Array2<S> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul inner dims: {k} vs {k2}");
    let mut out = Array2::<S>::zeros((m, n));
    if m * k * n < PAR_THRESHOLD || m < 2 {
        general_mat_mul(S::one(), &a, &b, S::zero(), &mut out.view_mut());
        return out;
    }
    let chunk = m.div_ceil(4).max(32);
    let a_chunks: Vec<ArrayView2<'_, S>> = a.axis_chunks_iter(Axis(0), chunk).collect();
    let out_chunks: Vec<ArrayViewMut2<'_, S>> =
        out.axis_chunks_iter_mut(Axis(0), chunk).collect();
    a_chunks
        .into_par_iter()
        .zip(out_chunks)
        .for_each(|(ac, mut oc)| {
            general_mat_mul(S::one(), &ac, &b, S::zero(), &mut oc);
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Array::from_shape_fn((13, 9), |_| rng.gen_range(-1.0..1.0f64));
        let b = Array::from_shape_fn((9, 5), |_| rng.gen_range(-1.0..1.0f64));
        let fast = par_matmul(a.view(), b.view());
        for i in 0..13 {
            for j in 0..5 {
                let want: f64 = (0..9).map(|t| a[[i, t]] * b[[t, j]]).sum();
                assert!((fast[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_product_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Array::from_shape_fn((257, 128), |_| rng.gen_range(-1.0..1.0f32));
        let b = Array::from_shape_fn((128, 64), |_| rng.gen_range(-1.0..1.0f32));
        let x = par_matmul(a.view(), b.view());
        let y = par_matmul(a.view(), b.view());
        assert_eq!(x, y);
    }
}
