//! Minimal reverse-mode autodiff over `ndarray`, sized for this crate.
//!
//! The engine is a define-by-run tape: every operation appends a node holding
//! its output value and a backward rule. Calling [`Tape::backward`] on a
//! scalar walks the tape in reverse and accumulates gradients into every
//! leaf created with [`Tape::param`].
//!
//! The element type is generic over [`Scalar`] so the same graph code runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.

mod conv;
mod gradcheck;
mod linalg;
mod ops;
mod tape;

pub use conv::{conv3d, Conv3dSpec};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use linalg::par_matmul;
pub use ops::concat;
pub use tape::{GradStore, Tape, Tensor};

use ndarray::ScalarOperand;
use std::fmt;

/// Floating-point element type usable on the tape.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ScalarOperand
    + std::iter::Sum
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn cast(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn cast(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
