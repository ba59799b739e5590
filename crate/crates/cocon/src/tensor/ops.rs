//! Elementwise, linear-algebra, shape and loss primitives with backward rules.

use super::tape::{BackOp, Tensor};
use super::{par_matmul, Scalar};
use ndarray::{Array2, ArrayD, Axis, IxDyn, Slice};
use rand::Rng;

/// Smallest norm treated as nonzero inside `l2_normalize_last`.
pub(crate) const NORM_EPS: f64 = 1e-12;

fn same_shape<S: Scalar>(a: &Tensor<'_, S>, b: &Tensor<'_, S>, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

/// Reshape helper that always yields a standard-layout owned array.
pub(crate) fn reshaped<S: Scalar>(a: &ArrayD<S>, shape: &[usize]) -> ArrayD<S> {
    let len: usize = shape.iter().product();
    assert_eq!(a.len(), len, "reshape: {:?} -> {:?}", a.shape(), shape);
    let data: Vec<S> = if let Some(s) = a.as_slice() {
        s.to_vec()
    } else {
        a.iter().cloned().collect()
    };
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("reshape")
}

pub(crate) fn as_2d<S: Scalar>(a: &ArrayD<S>) -> Array2<S> {
    a.clone().into_dimensionality::<ndarray::Ix2>().expect("expected 2-d tensor")
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

struct AddBack;
impl<S: Scalar> BackOp<S> for AddBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        vec![g.clone(), g.clone()]
    }
}

struct SubBack;
impl<S: Scalar> BackOp<S> for SubBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        vec![g.clone(), g.mapv(|v| -v)]
    }
}

struct MulBack;
impl<S: Scalar> BackOp<S> for MulBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        vec![g * p[1], g * p[0]]
    }
}

struct AffineBack<S> {
    mul: S,
}
impl<S: Scalar> BackOp<S> for AffineBack<S> {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        vec![g.mapv(|v| v * self.mul)]
    }
}

struct AddBiasBack;
impl<S: Scalar> BackOp<S> for AddBiasBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let bias_len = p[1].len();
        let mut gb = ArrayD::<S>::zeros(IxDyn(&[bias_len]));
        {
            let gb_s = gb.as_slice_mut().unwrap();
            let g_std = g.as_standard_layout();
            for row in g_std.as_slice().unwrap().chunks_exact(bias_len) {
                for (acc, &v) in gb_s.iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
        }
        vec![g.clone(), gb]
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

struct ReluBack;
impl<S: Scalar> BackOp<S> for ReluBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let mut gx = g.clone();
        gx.zip_mut_with(p[0], |gv, &x| {
            if x <= S::zero() {
                *gv = S::zero();
            }
        });
        vec![gx]
    }
}

struct SigmoidBack;
impl<S: Scalar> BackOp<S> for SigmoidBack {
    fn back(&self, g: &ArrayD<S>, out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let mut gx = g.clone();
        gx.zip_mut_with(out, |gv, &y| *gv = *gv * y * (S::one() - y));
        vec![gx]
    }
}

struct TanhBack;
impl<S: Scalar> BackOp<S> for TanhBack {
    fn back(&self, g: &ArrayD<S>, out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let mut gx = g.clone();
        gx.zip_mut_with(out, |gv, &y| *gv = *gv * (S::one() - y * y));
        vec![gx]
    }
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

struct MatmulBack;
impl<S: Scalar> BackOp<S> for MatmulBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let g2 = as_2d(g);
        let a = as_2d(p[0]);
        let b = as_2d(p[1]);
        let ga = par_matmul(g2.view(), b.t());
        let gb = par_matmul(a.t(), g2.view());
        vec![ga.into_dyn(), gb.into_dyn()]
    }
}

/// `a (m,k) · bᵀ` for `b (n,k)`.
struct MatmulNtBack;
impl<S: Scalar> BackOp<S> for MatmulNtBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let g2 = as_2d(g);
        let a = as_2d(p[0]);
        let b = as_2d(p[1]);
        let ga = par_matmul(g2.view(), b.view());
        let gb = par_matmul(g2.t(), a.view());
        vec![ga.into_dyn(), gb.into_dyn()]
    }
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

struct SumAllBack;
impl<S: Scalar> BackOp<S> for SumAllBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let gs = *g.iter().next().unwrap();
        vec![ArrayD::from_elem(p[0].raw_dim(), gs)]
    }
}

struct SumAxisBack {
    axis: usize,
}
impl<S: Scalar> BackOp<S> for SumAxisBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let expanded = g.clone().insert_axis(Axis(self.axis));
        let gx = expanded.broadcast(p[0].raw_dim()).unwrap().to_owned();
        vec![gx]
    }
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

struct ReshapeBack;
impl<S: Scalar> BackOp<S> for ReshapeBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        vec![reshaped(g, p[0].shape())]
    }
}

struct ConcatBack {
    axis: usize,
    lengths: Vec<usize>,
}
impl<S: Scalar> BackOp<S> for ConcatBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let mut start = 0isize;
        self.lengths
            .iter()
            .map(|&len| {
                let sl = g
                    .slice_axis(Axis(self.axis), Slice::new(start, Some(start + len as isize), 1))
                    .to_owned();
                start += len as isize;
                sl
            })
            .collect()
    }
}

struct NarrowBack {
    axis: usize,
    start: usize,
    len: usize,
}
impl<S: Scalar> BackOp<S> for NarrowBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let mut gx = ArrayD::<S>::zeros(p[0].raw_dim());
        gx.slice_axis_mut(
            Axis(self.axis),
            Slice::new(self.start as isize, Some((self.start + self.len) as isize), 1),
        )
        .assign(g);
        vec![gx]
    }
}

// ---------------------------------------------------------------------------
// Normalization / pooling / dropout / cross-entropy
// ---------------------------------------------------------------------------

struct L2NormLastBack<S> {
    norms: Vec<S>,
}
impl<S: Scalar> BackOp<S> for L2NormLastBack<S> {
    fn back(&self, g: &ArrayD<S>, out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let d = *out.shape().last().unwrap();
        let mut gx = ArrayD::<S>::zeros(out.raw_dim());
        {
            let gx_s = gx.as_slice_mut().unwrap();
            let g_std = g.as_standard_layout();
            let g_s = g_std.as_slice().unwrap();
            let y_s = out.as_slice().unwrap();
            for (r, &norm) in self.norms.iter().enumerate() {
                let a = r * d;
                let dot: S =
                    (0..d).map(|j| g_s[a + j] * y_s[a + j]).fold(S::zero(), |acc, v| acc + v);
                for j in 0..d {
                    gx_s[a + j] = (g_s[a + j] - dot * y_s[a + j]) / norm;
                }
            }
        }
        vec![gx]
    }
}

struct SpatialMaxBack {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}
impl<S: Scalar> BackOp<S> for SpatialMaxBack {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let (h, w, d) = (self.in_shape[1], self.in_shape[2], self.in_shape[3]);
        let mut gx = ArrayD::<S>::zeros(IxDyn(&self.in_shape));
        {
            let gx_s = gx.as_slice_mut().unwrap();
            let g_std = g.as_standard_layout();
            let g_s = g_std.as_slice().unwrap();
            for (bd, &pos) in self.argmax.iter().enumerate() {
                let (b, j) = (bd / d, bd % d);
                gx_s[b * h * w * d + pos * d + j] = g_s[bd];
            }
        }
        vec![gx]
    }
}

struct DropoutBack<S> {
    mask: ArrayD<S>,
}
impl<S: Scalar> BackOp<S> for DropoutBack<S> {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        vec![g * &self.mask]
    }
}

struct SoftmaxXentBack<S> {
    probs: Array2<S>,
    targets: Vec<usize>,
}
impl<S: Scalar> BackOp<S> for SoftmaxXentBack<S> {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, _p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let (r, c) = self.probs.dim();
        let g_std = g.as_standard_layout();
        let g_s = g_std.as_slice().unwrap();
        let mut gx = self.probs.clone();
        for i in 0..r {
            let gi = g_s[i];
            for j in 0..c {
                let delta = if j == self.targets[i] { S::one() } else { S::zero() };
                gx[[i, j]] = (gx[[i, j]] - delta) * gi;
            }
        }
        vec![gx.into_dyn()]
    }
}

// ---------------------------------------------------------------------------
// Tensor methods
// ---------------------------------------------------------------------------

impl<'t, S: Scalar> Tensor<'t, S> {
    pub fn add(self, rhs: Tensor<'t, S>) -> Tensor<'t, S> {
        same_shape(&self, &rhs, "add");
        let v = &*self.value() + &*rhs.value();
        self.tape.push_op(v, vec![self.idx, rhs.idx], Box::new(AddBack))
    }

    pub fn subtract(self, rhs: Tensor<'t, S>) -> Tensor<'t, S> {
        same_shape(&self, &rhs, "sub");
        let v = &*self.value() - &*rhs.value();
        self.tape.push_op(v, vec![self.idx, rhs.idx], Box::new(SubBack))
    }

    /// Elementwise (Hadamard) product.
    pub fn multiply(self, rhs: Tensor<'t, S>) -> Tensor<'t, S> {
        same_shape(&self, &rhs, "mul");
        let v = &*self.value() * &*rhs.value();
        self.tape.push_op(v, vec![self.idx, rhs.idx], Box::new(MulBack))
    }

    /// `mul * x + add`, elementwise with scalar coefficients.
    pub fn affine(self, mul: S, add: S) -> Tensor<'t, S> {
        let v = self.value().mapv(|x| mul * x + add);
        self.tape.push_op(v, vec![self.idx], Box::new(AffineBack { mul }))
    }

    pub fn scale(self, mul: S) -> Tensor<'t, S> {
        self.affine(mul, S::zero())
    }

    pub fn square(self) -> Tensor<'t, S> {
        self.multiply(self)
    }

    /// Broadcast-add a rank-1 bias over the last axis.
    pub fn add_bias(self, bias: Tensor<'t, S>) -> Tensor<'t, S> {
        let bl = bias.len();
        assert_eq!(bias.shape().len(), 1, "bias must be rank 1");
        assert_eq!(*self.shape().last().unwrap(), bl, "bias length mismatch");
        let v = &*self.value() + &*bias.value();
        self.tape.push_op(v, vec![self.idx, bias.idx], Box::new(AddBiasBack))
    }

    pub fn relu(self) -> Tensor<'t, S> {
        let v = self.value().mapv(|x| if x > S::zero() { x } else { S::zero() });
        self.tape.push_op(v, vec![self.idx], Box::new(ReluBack))
    }

    pub fn sigmoid(self) -> Tensor<'t, S> {
        let one = S::one();
        let v = self.value().mapv(|x| one / (one + (-x).exp()));
        self.tape.push_op(v, vec![self.idx], Box::new(SigmoidBack))
    }

    pub fn tanh(self) -> Tensor<'t, S> {
        let v = self.value().mapv(|x| x.tanh());
        self.tape.push_op(v, vec![self.idx], Box::new(TanhBack))
    }

    /// 2-d matrix product.
    pub fn matmul(self, rhs: Tensor<'t, S>) -> Tensor<'t, S> {
        let v = par_matmul(as_2d(&self.value()).view(), as_2d(&rhs.value()).view());
        self.tape.push_op(v.into_dyn(), vec![self.idx, rhs.idx], Box::new(MatmulBack))
    }

    /// `self (m,k) · rhsᵀ` for `rhs (n,k)`; the gram-matrix workhorse.
    pub fn matmul_nt(self, rhs: Tensor<'t, S>) -> Tensor<'t, S> {
        let a = as_2d(&self.value());
        let b = as_2d(&rhs.value());
        let v = par_matmul(a.view(), b.t());
        self.tape.push_op(v.into_dyn(), vec![self.idx, rhs.idx], Box::new(MatmulNtBack))
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum_all(self) -> Tensor<'t, S> {
        let s: S = self.value().iter().cloned().sum();
        let v = ArrayD::from_elem(IxDyn(&[]), s);
        self.tape.push_op(v, vec![self.idx], Box::new(SumAllBack))
    }

    pub fn mean_all(self) -> Tensor<'t, S> {
        let n = S::from_usize(self.len()).unwrap();
        self.sum_all().scale(S::one() / n)
    }

    pub fn sum_axis(self, axis: usize) -> Tensor<'t, S> {
        let v = self.value().sum_axis(Axis(axis));
        self.tape.push_op(v, vec![self.idx], Box::new(SumAxisBack { axis }))
    }

    pub fn mean_axis(self, axis: usize) -> Tensor<'t, S> {
        let n = S::from_usize(self.shape()[axis]).unwrap();
        self.sum_axis(axis).scale(S::one() / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Tensor<'t, S> {
        let v = reshaped(&self.value(), shape);
        self.tape.push_op(v, vec![self.idx], Box::new(ReshapeBack))
    }

    /// Contiguous sub-tensor along one axis.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Tensor<'t, S> {
        assert!(start + len <= self.shape()[axis], "narrow out of bounds");
        let v = self
            .value()
            .slice_axis(Axis(axis), Slice::new(start as isize, Some((start + len) as isize), 1))
            .to_owned();
        let v = v.as_standard_layout().to_owned();
        self.tape.push_op(v, vec![self.idx], Box::new(NarrowBack { axis, start, len }))
    }

    /// Normalize every last-axis fiber to unit L2 norm.
    ///
    /// Fibers with norm below `1e-12` pass through scaled by `1/eps`; callers
    /// that care reject zero-norm inputs up front.
    pub fn l2_normalize_last(self) -> Tensor<'t, S> {
        let value = self.value();
        let d = *value.shape().last().unwrap();
        let std = value.as_standard_layout();
        let x = std.as_slice().unwrap();
        let rows = x.len() / d;
        let eps = S::cast(NORM_EPS);
        let mut out = vec![S::zero(); x.len()];
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let a = r * d;
            let norm = x[a..a + d]
                .iter()
                .map(|&v| v * v)
                .fold(S::zero(), |acc, v| acc + v)
                .sqrt()
                .max(eps);
            norms.push(norm);
            for j in 0..d {
                out[a + j] = x[a + j] / norm;
            }
        }
        let shape = value.shape().to_vec();
        drop(value);
        let v = ArrayD::from_shape_vec(IxDyn(&shape), out).unwrap();
        self.tape.push_op(v, vec![self.idx], Box::new(L2NormLastBack { norms }))
    }

    /// Stacked max pool: `(B, H, W, D) -> (B, D)`, max over all spatial
    /// positions per channel. Ties resolve to the first position.
    pub fn global_spatial_max(self) -> Tensor<'t, S> {
        let value = self.value();
        let shape = value.shape().to_vec();
        assert_eq!(shape.len(), 4, "global_spatial_max expects (B,H,W,D)");
        let (b, h, w, d) = (shape[0], shape[1], shape[2], shape[3]);
        let std = value.as_standard_layout();
        let x = std.as_slice().unwrap();
        let mut out = vec![S::neg_infinity(); b * d];
        let mut argmax = vec![0usize; b * d];
        for bi in 0..b {
            for pos in 0..h * w {
                let base = bi * h * w * d + pos * d;
                for j in 0..d {
                    let v = x[base + j];
                    if v > out[bi * d + j] {
                        out[bi * d + j] = v;
                        argmax[bi * d + j] = pos;
                    }
                }
            }
        }
        drop(value);
        let v = ArrayD::from_shape_vec(IxDyn(&[b, d]), out).unwrap();
        self.tape.push_op(v, vec![self.idx], Box::new(SpatialMaxBack { argmax, in_shape: shape }))
    }

    /// Inverted dropout with keep-probability `1 - p`. Identity when `p == 0`.
    pub fn dropout(self, p: f64, rng: &mut impl Rng) -> Tensor<'t, S> {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0,1)");
        if p == 0.0 {
            return self;
        }
        let keep = S::cast(1.0 / (1.0 - p));
        let mask = ArrayD::from_shape_simple_fn(self.value().raw_dim(), || {
            if rng.gen::<f64>() < p {
                S::zero()
            } else {
                keep
            }
        });
        let v = &*self.value() * &mask;
        self.tape.push_op(v, vec![self.idx], Box::new(DropoutBack { mask }))
    }

    /// Row-wise softmax cross-entropy against integer targets.
    ///
    /// `self` is `(R, C)` of logits; returns the `(R,)` vector of
    /// `-log softmax(row)[target]`, computed with max-subtraction.
    pub fn softmax_cross_entropy(self, targets: &[usize]) -> Tensor<'t, S> {
        let logits = as_2d(&self.value());
        let (r, c) = logits.dim();
        assert_eq!(targets.len(), r, "one target per row");
        assert!(targets.iter().all(|&t| t < c), "target out of range");
        let mut probs = Array2::<S>::zeros((r, c));
        let mut losses = Vec::with_capacity(r);
        for i in 0..r {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[[i, j]] = e;
                sum = sum + e;
            }
            for j in 0..c {
                probs[[i, j]] = probs[[i, j]] / sum;
            }
            losses.push(sum.ln() - (row[targets[i]] - max));
        }
        let v = ArrayD::from_shape_vec(IxDyn(&[r]), losses).unwrap();
        self.tape.push_op(
            v,
            vec![self.idx],
            Box::new(SoftmaxXentBack { probs, targets: targets.to_vec() }),
        )
    }
}

/// Concatenate along an axis.
pub fn concat<'t, S: Scalar>(axis: usize, parts: &[Tensor<'t, S>]) -> Tensor<'t, S> {
    assert!(!parts.is_empty(), "concat of zero tensors");
    let tape = parts[0].tape();
    let values: Vec<_> = parts.iter().map(|t| t.to_array()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let out = ndarray::concatenate(Axis(axis), &views).expect("concat shapes");
    let lengths = values.iter().map(|v| v.shape()[axis]).collect();
    tape.push_op(
        out.as_standard_layout().to_owned(),
        parts.iter().map(|t| t.idx).collect(),
        Box::new(ConcatBack { axis, lengths }),
    )
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    #[test]
    fn add_mul_values_and_grads() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.param(arr1(&[1.0, -2.0]).into_dyn());
        let b = tape.param(arr1(&[3.0, 4.0]).into_dyn());
        let loss = a.multiply(b).add(a).sum_all();
        assert_abs_diff_eq!(loss.item(), 1.0 * 3.0 + 1.0 - 2.0 * 4.0 - 2.0, epsilon = 1e-12);
        let grads = tape.backward(loss);
        assert_eq!(grads.grad_of(a).as_slice().unwrap(), &[4.0, 5.0]);
        assert_eq!(grads.grad_of(b).as_slice().unwrap(), &[1.0, -2.0]);
    }

    #[test]
    fn square_accumulates_both_branches() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.param(arr1(&[3.0]).into_dyn());
        let loss = a.square().sum_all();
        let grads = tape.backward(loss);
        assert_abs_diff_eq!(grads.grad_of(a)[[0]], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn matmul_nt_matches_matmul_of_transpose() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.param(arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).into_dyn());
        let g = a.matmul_nt(a);
        let v = g.to_array();
        assert_eq!(v.shape(), &[3, 3]);
        assert_abs_diff_eq!(v[[0, 1]], 1.0 * 3.0 + 2.0 * 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[[2, 2]], 25.0 + 36.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_xent_uniform_is_ln_n() {
        let tape: Tape<f64> = Tape::new();
        let logits = tape.param(arr2(&[[0.5, 0.5, 0.5]]).into_dyn());
        let loss = logits.softmax_cross_entropy(&[1]).mean_all();
        assert_abs_diff_eq!(loss.item(), 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn l2_normalize_rows_unit() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.param(arr2(&[[3.0, 4.0], [0.5, 0.0]]).into_dyn());
        let y = x.l2_normalize_last().to_array();
        assert_abs_diff_eq!(y[[0, 0]], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(y[[0, 1]], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(y[[1, 0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn global_spatial_max_picks_max_and_routes_grad() {
        let tape: Tape<f64> = Tape::new();
        // (1, 2, 2, 1): values 1,5,3,2 -> max 5 at position 1
        let x = tape.param(
            ArrayD::from_shape_vec(IxDyn(&[1, 2, 2, 1]), vec![1.0, 5.0, 3.0, 2.0]).unwrap(),
        );
        let y = x.global_spatial_max();
        assert_eq!(y.to_array().as_slice().unwrap(), &[5.0]);
        let loss = y.sum_all();
        let grads = tape.backward(loss);
        assert_eq!(grads.grad_of(x).as_slice().unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn narrow_and_concat_roundtrip() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.param(arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).into_dyn());
        let left = x.narrow(1, 0, 1);
        let right = x.narrow(1, 1, 2);
        let back = concat(1, &[left, right]);
        assert_eq!(back.to_array(), x.to_array());
        let loss = back.multiply(back).sum_all();
        let grads = tape.backward(loss);
        assert_eq!(
            grads.grad_of(x).as_slice().unwrap(),
            &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0]
        );
    }

    #[test]
    fn sum_axis_broadcasts_grad() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.param(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let loss = x.sum_axis(0).multiply(tape.input(arr1(&[1.0, 10.0]).into_dyn())).sum_all();
        let grads = tape.backward(loss);
        assert_eq!(grads.grad_of(x).as_slice().unwrap(), &[1.0, 10.0, 1.0, 10.0]);
    }
}
