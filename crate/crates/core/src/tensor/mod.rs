//! Dense row-major tensors and the primitive operations the models are
//! built from.

pub mod conv;
mod scalar;

use std::fmt;

pub use conv::ConvGeometry;
pub use scalar::{sigmoid, DType, Real};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero dimension in {shape:?}")));
        }
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Value of a shape-`[]` (or single element) tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(
                "index",
                format!("index rank {} for shape {:?}", index.len(), self.shape),
            ));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::IndexOutOfRange {
                    op: "index",
                    index: i,
                    bound: d,
                });
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(|x| x.tanh())
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    /// Dispatches one of the pointwise operations by tag.
    pub fn elementwise(op: Elementwise, args: &[&Self]) -> Result<Self> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            Elementwise::Sigmoid | Elementwise::Tanh => 1,
        };
        if args.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "{op:?} takes {arity} arguments, got {}",
                args.len()
            )));
        }
        match op {
            Elementwise::Add => args[0].add(args[1]),
            Elementwise::Sub => args[0].sub(args[1]),
            Elementwise::Mul => args[0].mul(args[1]),
            Elementwise::Sigmoid => Ok(args[0].sigmoid()),
            Elementwise::Tanh => Ok(args[0].tanh()),
        }
    }

    /// Adds a per-channel bias along the last dimension.
    pub fn add_bias(&self, bias: &Self) -> Result<Self> {
        let m = self.last_dim();
        if bias.rank() != 1 || bias.len() != m {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for tensor {:?}", bias.shape, self.shape),
            ));
        }
        let mut out = self.clone();
        for chunk in out.data.chunks_exact_mut(m) {
            for (x, &b) in chunk.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    /// `A[p,q] x B[q,r] -> [p,r]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape, other.shape),
            ));
        }
        let (p, q, r) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Self::zeros(&[p, r]);
        conv::gemm_acc(p, q, r, &self.data, q, 1, &other.data, r, &mut out.data, r);
        Ok(out)
    }

    /// `x W^T`: `x` is `[k, q]` or `[q]`, `W` is `[p, q]`.
    pub fn linear(&self, weight: &Self) -> Result<Self> {
        let q = self.last_dim();
        if weight.rank() != 2 || weight.shape[1] != q || self.rank() == 0 || self.rank() > 2 {
            return Err(Error::shape(
                "linear",
                format!("input {:?} with weight {:?}", self.shape, weight.shape),
            ));
        }
        let p = weight.shape[0];
        let k = self.len() / q;
        let mut out_shape = self.shape.clone();
        *out_shape.last_mut().expect("rank >= 1") = p;
        let mut out = Self::zeros(&out_shape);
        conv::gemm_acc(k, q, p, &self.data, q, 1, &weight.transpose2()?.data, p, &mut out.data, p);
        Ok(out)
    }

    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", self.shape)));
        }
        let (p, q) = (self.shape[0], self.shape[1]);
        let mut out = Self::zeros(&[q, p]);
        for i in 0..p {
            for j in 0..q {
                out.data[j * p + i] = self.data[i * q + j];
            }
        }
        Ok(out)
    }

    /// Softmax over the last dimension with max subtraction.
    pub fn softmax(&self) -> Result<Self> {
        if !self.all_finite() {
            return Err(Error::NonFinite {
                op: "softmax input".into(),
            });
        }
        let v = self.last_dim();
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(v) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x = *x / total;
            }
        }
        Ok(out)
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&self) -> Result<Self> {
        if !self.all_finite() {
            return Err(Error::NonFinite {
                op: "log_softmax input".into(),
            });
        }
        let v = self.last_dim();
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(v) {
            let lse = log_sum_exp(row);
            for x in row.iter_mut() {
                *x = *x - lse;
            }
        }
        Ok(out)
    }

    /// Same-padding convolution of a `[w, n, m]` state with a
    /// `[k_w, k_h, m, m']` kernel bank (blocked path).
    pub fn conv_same(&self, kernel: &Self) -> Result<Self> {
        let g = conv_geometry(kernel, self)?;
        let mut out = Self::zeros(&[g.width, g.len, g.c_out]);
        conv::conv_forward(&g, &self.data, &kernel.data, &mut out.data);
        Ok(out)
    }

    /// Loop-nest reference for [`Tensor::conv_same`].
    pub fn conv_same_reference(&self, kernel: &Self) -> Result<Self> {
        let g = conv_geometry(kernel, self)?;
        let mut out = Self::zeros(&[g.width, g.len, g.c_out]);
        conv::conv_reference(&g, &self.data, &kernel.data, &mut out.data);
        Ok(out)
    }

    fn check_state_column(&self, k: usize, op: &'static str) -> Result<(usize, usize)> {
        if self.rank() != 3 {
            return Err(Error::shape(op, format!("state must be [w,n,m], got {:?}", self.shape)));
        }
        let (n, m) = (self.shape[1], self.shape[2]);
        if k >= n {
            return Err(Error::IndexOutOfRange {
                op,
                index: k,
                bound: n,
            });
        }
        Ok((n, m))
    }

    /// Reads `s[0, k, :]`.
    pub fn column(&self, k: usize) -> Result<Self> {
        let (_, m) = self.check_state_column(k, "column")?;
        Ok(Tensor {
            shape: vec![m],
            data: self.data[k * m..(k + 1) * m].to_vec(),
        })
    }

    /// Overwrites `s[0, k, :]` in place.
    pub fn write_column(&mut self, k: usize, values: &Self) -> Result<()> {
        let (_, m) = self.check_state_column(k, "write_column")?;
        if values.shape != [m] {
            return Err(Error::shape(
                "write_column",
                format!("column of {m} channels, got {:?}", values.shape),
            ));
        }
        self.data[k * m..(k + 1) * m].copy_from_slice(&values.data);
        Ok(())
    }

    /// First width row `s[0, :, :]` as an `[n, m]` matrix.
    pub fn first_row(&self) -> Result<Self> {
        if self.rank() != 3 {
            return Err(Error::shape("first_row", format!("{:?}", self.shape)));
        }
        let (n, m) = (self.shape[1], self.shape[2]);
        Ok(Tensor {
            shape: vec![n, m],
            data: self.data[..n * m].to_vec(),
        })
    }

    /// Gathers rows of a `[V, m]` table.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::shape("gather", format!("table {:?}", self.shape)));
        }
        if ids.is_empty() {
            return Err(Error::Empty("gather ids"));
        }
        let (v, m) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(ids.len() * m);
        for &id in ids {
            if id >= v {
                return Err(Error::Token { id, vocab: v });
            }
            data.extend_from_slice(&self.data[id * m..(id + 1) * m]);
        }
        Ok(Tensor {
            shape: vec![ids.len(), m],
            data,
        })
    }

    /// Concatenates along the last dimension; leading dims must agree.
    pub fn concat_last(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self.last_dim(), other.last_dim());
        if self.rank() != other.rank() || self.shape[..self.rank() - 1] != other.shape[..other.rank() - 1] {
            return Err(Error::shape(
                "concat",
                format!("{:?} with {:?}", self.shape, other.shape),
            ));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = a + b;
        let mut data = Vec::with_capacity(self.len() + other.len());
        for (x, y) in self.data.chunks_exact(a).zip(other.data.chunks_exact(b)) {
            data.extend_from_slice(x);
            data.extend_from_slice(y);
        }
        Ok(Tensor { shape, data })
    }

    /// Stacks equally shaped tensors along a new leading dimension.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("stack"))?;
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }
}

pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let total: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + total.ln()
}

/// Checks kernel/state compatibility and returns the convolution geometry.
pub fn conv_geometry<T: Real>(kernel: &Tensor<T>, s: &Tensor<T>) -> Result<ConvGeometry> {
    if kernel.rank() != 4 {
        return Err(Error::shape("conv_same", format!("kernel bank {:?} is not 4-d", kernel.shape)));
    }
    if s.rank() != 3 {
        return Err(Error::shape("conv_same", format!("state {:?} is not [w,n,m]", s.shape)));
    }
    let (kw, kh, c_in, c_out) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
    if kw % 2 == 0 || kh % 2 == 0 {
        return Err(Error::EvenKernel { kw, kh });
    }
    if c_in != s.shape[2] {
        return Err(Error::shape(
            "conv_same",
            format!("kernel expects {c_in} channels, state has {}", s.shape[2]),
        ));
    }
    Ok(ConvGeometry {
        width: s.shape[0],
        len: s.shape[1],
        kw,
        kh,
        c_in,
        c_out,
    })
}

/// A `[k_w, k_h, m, m]` convolution kernel bank.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank<T>(Tensor<T>);

impl<T: Real> KernelBank<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        let s = tensor.shape();
        if s.len() != 4 || s[2] != s[3] {
            return Err(Error::shape("kernel bank", format!("expected [kw,kh,m,m], got {s:?}")));
        }
        if s[0] % 2 == 0 || s[1] % 2 == 0 {
            return Err(Error::EvenKernel { kw: s[0], kh: s[1] });
        }
        Ok(KernelBank(tensor))
    }

    pub fn zeros(kw: usize, kh: usize, m: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[kw, kh, m, m]))
    }

    /// Center tap is the identity; `conv_same` with it returns its input.
    pub fn delta(kw: usize, kh: usize, m: usize) -> Result<Self> {
        let mut t = Tensor::zeros(&[kw, kh, m, m]);
        for c in 0..m {
            t.set(&[kw / 2, kh / 2, c, c], T::one())?;
        }
        Self::new(t)
    }

    pub fn param_count(&self) -> usize {
        self.0.len()
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn conv(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        s.conv_same(&self.0)
    }
}

#[cfg(test)]
mod tests;
