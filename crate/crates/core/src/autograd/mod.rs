//! Reverse-mode differentiation.
//!
//! Model code is written once against the [`Graph`] trait. [`Tape`] records
//! every operation for a later backward sweep; [`Eager`] evaluates values
//! only and is used for inference.

mod eager;
pub mod gradcheck;
mod params;
mod tape;

pub use eager::Eager;
pub use gradcheck::{gradcheck, GradCheckOptions, GradCheckReport};
pub use params::{BoundParams, ParamGrads, ParameterStore};
pub use tape::{Gradients, OpKind, Tape, Var};

use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// The differentiable primitive set shared by the recording tape and the
/// value-only evaluator.
pub trait Graph<T: Real> {
    type V: Clone;

    fn constant(&mut self, t: Tensor<T>) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;

    fn conv(&mut self, kernel: &Self::V, s: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn add_bias(&mut self, x: &Self::V, bias: &Self::V) -> Result<Self::V>;
    fn sigmoid(&mut self, x: &Self::V) -> Self::V;
    fn tanh(&mut self, x: &Self::V) -> Self::V;
    /// `1 - x`
    fn one_minus(&mut self, x: &Self::V) -> Self::V;
    fn square(&mut self, x: &Self::V) -> Self::V;
    /// Multiplication by a fixed tensor that receives no gradient.
    fn mul_const(&mut self, x: &Self::V, c: Tensor<T>) -> Result<Self::V>;
    /// `x W^T` with `x: [k, q]` or `[q]` and `W: [p, q]`.
    fn linear(&mut self, x: &Self::V, w: &Self::V) -> Result<Self::V>;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn reshape(&mut self, x: &Self::V, shape: &[usize]) -> Result<Self::V>;
    /// `s[0, :, :]` of a `[w, n, m]` state.
    fn first_row(&mut self, s: &Self::V) -> Result<Self::V>;
    /// Embeds `x: [k, m]` at `s[0, 0..k, :]` of a zero `[width, len, m]` state.
    fn place_first_row(&mut self, x: &Self::V, width: usize, len: usize) -> Result<Self::V>;
    /// `s[0, k, :]`
    fn column(&mut self, s: &Self::V, k: usize) -> Result<Self::V>;
    /// Copy of `s` with `s[0, k, :]` replaced by `v`.
    fn write_column(&mut self, s: &Self::V, k: usize, v: &Self::V) -> Result<Self::V>;
    fn gather(&mut self, table: &Self::V, ids: &[usize]) -> Result<Self::V>;
    fn concat_last(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn stack(&mut self, items: &[Self::V]) -> Result<Self::V>;
    fn softmax(&mut self, x: &Self::V) -> Result<Self::V>;
    fn sum(&mut self, x: &Self::V) -> Self::V;
    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [k, V]`. `None` rows are masked out.
    fn cross_entropy(&mut self, logits: &Self::V, targets: &[Option<usize>]) -> Result<Self::V>;
}
