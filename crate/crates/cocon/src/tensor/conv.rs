//! 3-d convolution over `(B, T, H, W, C)` tensors, im2col + gemm.

use super::tape::{BackOp, Tensor};
use super::{par_matmul, Scalar};
use ndarray::{Array2, ArrayD, IxDyn};
use rayon::prelude::*;

/// Kernel/stride/padding of one conv layer. Channels-last layout; the kernel
/// tensor is `(kt, kh, kw, c_in, c_out)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
}

impl Conv3dSpec {
    /// 3x3x3 kernel, unit temporal stride, spatial stride `s`, full padding.
    pub fn k3(spatial_stride: usize) -> Self {
        Conv3dSpec {
            kernel: (3, 3, 3),
            stride: (1, spatial_stride, spatial_stride),
            padding: (1, 1, 1),
        }
    }

    fn out_dim(in_dim: usize, k: usize, s: usize, p: usize) -> usize {
        (in_dim + 2 * p - k) / s + 1
    }

    /// Output `(T', H', W')` for an input `(T, H, W)`.
    pub fn out_shape(&self, t: usize, h: usize, w: usize) -> (usize, usize, usize) {
        (
            Self::out_dim(t, self.kernel.0, self.stride.0, self.padding.0),
            Self::out_dim(h, self.kernel.1, self.stride.1, self.padding.1),
            Self::out_dim(w, self.kernel.2, self.stride.2, self.padding.2),
        )
    }
}

fn pad_input<S: Scalar>(x: &ArrayD<S>, p: (usize, usize, usize)) -> ArrayD<S> {
    if p == (0, 0, 0) {
        return x.as_standard_layout().to_owned();
    }
    let sh = x.shape();
    let (b, t, h, w, c) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
    let mut out = ArrayD::<S>::zeros(IxDyn(&[b, t + 2 * p.0, h + 2 * p.1, w + 2 * p.2, c]));
    out.slice_mut(ndarray::s![
        ..,
        p.0 as i32..(p.0 + t) as i32,
        p.1 as i32..(p.1 + h) as i32,
        p.2 as i32..(p.2 + w) as i32,
        ..
    ])
    .assign(x);
    out
}

/// Gather the padded input into the `(rows, kt*kh*kw*c)` patch matrix.
fn im2col<S: Scalar>(
    padded: &ArrayD<S>,
    spec: &Conv3dSpec,
    out_dims: (usize, usize, usize),
) -> Array2<S> {
    let sh = padded.shape();
    let (b, tp, hp, wp, c) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
    let (to, ho, wo) = out_dims;
    let (kt, kh, kw) = spec.kernel;
    let (st, sh_, sw) = spec.stride;
    let cols = kt * kh * kw * c;
    let rows_per_b = to * ho * wo;
    let x = padded.as_slice().expect("padded input is standard layout");
    let mut m = Array2::<S>::zeros((b * rows_per_b, cols));
    let row_chunks: Vec<_> = m
        .as_slice_mut()
        .unwrap()
        .chunks_mut(rows_per_b * cols)
        .enumerate()
        .collect();
    row_chunks.into_par_iter().for_each(|(bi, chunk)| {
        let in_b = bi * tp * hp * wp * c;
        let mut row = 0usize;
        for t in 0..to {
            for h in 0..ho {
                for w in 0..wo {
                    let dst_base = row * cols;
                    let mut dst = dst_base;
                    for dt in 0..kt {
                        let src_t = in_b + (t * st + dt) * hp * wp * c;
                        for dh in 0..kh {
                            let src_h = src_t + (h * sh_ + dh) * wp * c;
                            for dw in 0..kw {
                                let src = src_h + (w * sw + dw) * c;
                                chunk[dst..dst + c].copy_from_slice(&x[src..src + c]);
                                dst += c;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    });
    m
}

/// Scatter-add the patch-matrix gradient back into a padded input gradient.
fn col2im<S: Scalar>(
    grad_m: &Array2<S>,
    padded_shape: &[usize],
    spec: &Conv3dSpec,
    out_dims: (usize, usize, usize),
) -> ArrayD<S> {
    let (_b, tp, hp, wp, c) =
        (padded_shape[0], padded_shape[1], padded_shape[2], padded_shape[3], padded_shape[4]);
    let (to, ho, wo) = out_dims;
    let (kt, kh, kw) = spec.kernel;
    let (st, sh_, sw) = spec.stride;
    let cols = kt * kh * kw * c;
    let rows_per_b = to * ho * wo;
    let gm = grad_m.as_slice().expect("grad matrix standard layout");
    let mut gx = ArrayD::<S>::zeros(IxDyn(padded_shape));
    let slab = tp * hp * wp * c;
    let out_chunks: Vec<_> = gx.as_slice_mut().unwrap().chunks_mut(slab).enumerate().collect();
    out_chunks.into_par_iter().for_each(|(bi, chunk)| {
        let mut row = bi * rows_per_b;
        for t in 0..to {
            for h in 0..ho {
                for w in 0..wo {
                    let mut src = row * cols;
                    for dt in 0..kt {
                        let dst_t = (t * st + dt) * hp * wp * c;
                        for dh in 0..kh {
                            let dst_h = dst_t + (h * sh_ + dh) * wp * c;
                            for dw in 0..kw {
                                let dst = dst_h + (w * sw + dw) * c;
                                for j in 0..c {
                                    chunk[dst + j] = chunk[dst + j] + gm[src + j];
                                }
                                src += c;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    });
    gx
}

fn crop_padding<S: Scalar>(g_padded: ArrayD<S>, p: (usize, usize, usize)) -> ArrayD<S> {
    if p == (0, 0, 0) {
        return g_padded;
    }
    let sh = g_padded.shape().to_vec();
    let (t, h, w) = (sh[1] - 2 * p.0, sh[2] - 2 * p.1, sh[3] - 2 * p.2);
    g_padded
        .slice(ndarray::s![
            ..,
            p.0 as i32..(p.0 + t) as i32,
            p.1 as i32..(p.1 + h) as i32,
            p.2 as i32..(p.2 + w) as i32,
            ..
        ])
        .as_standard_layout()
        .to_owned()
        .into_dyn()
}

struct Conv3dBack<S: Scalar> {
    spec: Conv3dSpec,
    patches: Array2<S>,
    padded_shape: Vec<usize>,
    out_dims: (usize, usize, usize),
    kernel_shape: Vec<usize>,
}

impl<S: Scalar> BackOp<S> for Conv3dBack<S> {
    fn back(&self, g: &ArrayD<S>, _out: &ArrayD<S>, p: &[&ArrayD<S>]) -> Vec<ArrayD<S>> {
        let c_out = *self.kernel_shape.last().unwrap();
        let rows = self.patches.nrows();
        let g_std = g.as_standard_layout();
        let g_mat =
            Array2::from_shape_vec((rows, c_out), g_std.as_slice().unwrap().to_vec()).unwrap();

        let cols = self.patches.ncols();
        let gw = par_matmul(self.patches.t(), g_mat.view());
        let gw = ArrayD::from_shape_vec(IxDyn(&self.kernel_shape), gw.into_iter().collect())
            .unwrap();

        let gb = g_mat.sum_axis(ndarray::Axis(0)).into_dyn();

        let w_mat = Array2::from_shape_vec(
            (cols, c_out),
            p[1].as_standard_layout().as_slice().unwrap().to_vec(),
        )
        .unwrap();
        let grad_patches = par_matmul(g_mat.view(), w_mat.t());
        let gx_padded = col2im(&grad_patches, &self.padded_shape, &self.spec, self.out_dims);
        let gx = crop_padding(gx_padded, self.spec.padding);

        vec![gx, gw, gb]
    }
}

/// `conv3d(x, kernel, bias)` for `x (B,T,H,W,Cin)`, kernel
/// `(kt,kh,kw,Cin,Cout)`, bias `(Cout,)`. Returns `(B,T',H',W',Cout)`.
pub fn conv3d<'t, S: Scalar>(
    x: Tensor<'t, S>,
    kernel: Tensor<'t, S>,
    bias: Tensor<'t, S>,
    spec: Conv3dSpec,
) -> Tensor<'t, S> {
    let xs = x.shape();
    let ks = kernel.shape();
    assert_eq!(xs.len(), 5, "conv3d input must be (B,T,H,W,C)");
    assert_eq!(ks.len(), 5, "conv3d kernel must be (kt,kh,kw,Cin,Cout)");
    assert_eq!(ks[0], spec.kernel.0);
    assert_eq!(ks[1], spec.kernel.1);
    assert_eq!(ks[2], spec.kernel.2);
    assert_eq!(ks[3], xs[4], "conv3d channel mismatch");
    let c_out = ks[4];
    assert_eq!(bias.shape(), vec![c_out]);

    let out_dims = spec.out_shape(xs[1], xs[2], xs[3]);
    let padded = pad_input(&x.value(), spec.padding);
    let padded_shape = padded.shape().to_vec();
    let patches = im2col(&padded, &spec, out_dims);

    let cols = patches.ncols();
    let w_mat = Array2::from_shape_vec(
        (cols, c_out),
        kernel.value().as_standard_layout().as_slice().unwrap().to_vec(),
    )
    .unwrap();
    let mut out_mat = par_matmul(patches.view(), w_mat.view());
    {
        let b = bias.value();
        let bs = b.as_slice().unwrap();
        for mut row in out_mat.rows_mut() {
            for (o, &bv) in row.iter_mut().zip(bs) {
                *o = *o + bv;
            }
        }
    }
    let out = ArrayD::from_shape_vec(
        IxDyn(&[xs[0], out_dims.0, out_dims.1, out_dims.2, c_out]),
        out_mat.into_iter().collect(),
    )
    .unwrap();

    x.tape().push_op(
        out,
        vec![x.idx, kernel.idx, bias.idx],
        Box::new(Conv3dBack {
            spec,
            patches,
            padded_shape,
            out_dims,
            kernel_shape: ks,
        }),
    )
}
