use std::sync::Arc;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Value-only evaluation; values are shared so decoder states clone cheaply.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

type V<T> = Arc<Tensor<T>>;

impl<T: Real> Graph<T> for Eager {
    type V = Arc<Tensor<T>>;

    fn constant(&mut self, t: Tensor<T>) -> V<T> {
        Arc::new(t)
    }

    fn value<'a>(&'a self, v: &'a V<T>) -> &'a Tensor<T> {
        v
    }

    fn conv(&mut self, kernel: &V<T>, s: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(s.conv_same(kernel)?))
    }

    fn add(&mut self, a: &V<T>, b: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(a.add(b)?))
    }

    fn sub(&mut self, a: &V<T>, b: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(a.sub(b)?))
    }

    fn mul(&mut self, a: &V<T>, b: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(a.mul(b)?))
    }

    fn add_bias(&mut self, x: &V<T>, bias: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(x.add_bias(bias)?))
    }

    fn sigmoid(&mut self, x: &V<T>) -> V<T> {
        Arc::new(x.sigmoid())
    }

    fn tanh(&mut self, x: &V<T>) -> V<T> {
        Arc::new(x.tanh())
    }

    fn one_minus(&mut self, x: &V<T>) -> V<T> {
        Arc::new(x.map(|v| T::one() - v))
    }

    fn square(&mut self, x: &V<T>) -> V<T> {
        Arc::new(x.map(|v| v * v))
    }

    fn mul_const(&mut self, x: &V<T>, c: Tensor<T>) -> Result<V<T>> {
        Ok(Arc::new(x.mul(&c)?))
    }

    fn linear(&mut self, x: &V<T>, w: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(x.linear(w)?))
    }

    fn matmul(&mut self, a: &V<T>, b: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(a.matmul(b)?))
    }

    fn reshape(&mut self, x: &V<T>, shape: &[usize]) -> Result<V<T>> {
        Ok(Arc::new(x.reshape(shape)?))
    }

    fn first_row(&mut self, s: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(s.first_row()?))
    }

    fn place_first_row(&mut self, x: &V<T>, width: usize, len: usize) -> Result<V<T>> {
        Ok(Arc::new(place_first_row(x, width, len)?))
    }

    fn column(&mut self, s: &V<T>, k: usize) -> Result<V<T>> {
        Ok(Arc::new(s.column(k)?))
    }

    fn write_column(&mut self, s: &V<T>, k: usize, v: &V<T>) -> Result<V<T>> {
        let mut out = (**s).clone();
        out.write_column(k, v)?;
        Ok(Arc::new(out))
    }

    fn gather(&mut self, table: &V<T>, ids: &[usize]) -> Result<V<T>> {
        Ok(Arc::new(table.gather_rows(ids)?))
    }

    fn concat_last(&mut self, a: &V<T>, b: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(a.concat_last(b)?))
    }

    fn stack(&mut self, items: &[V<T>]) -> Result<V<T>> {
        let refs: Vec<&Tensor<T>> = items.iter().map(|t| &**t).collect();
        Ok(Arc::new(Tensor::stack(&refs)?))
    }

    fn softmax(&mut self, x: &V<T>) -> Result<V<T>> {
        Ok(Arc::new(x.softmax()?))
    }

    fn sum(&mut self, x: &V<T>) -> V<T> {
        Arc::new(Tensor::scalar(x.sum()))
    }

    fn cross_entropy(&mut self, logits: &V<T>, targets: &[Option<usize>]) -> Result<V<T>> {
        let (total, _) = cross_entropy_forward(logits, targets)?;
        Ok(Arc::new(Tensor::scalar(total)))
    }
}

pub(crate) fn place_first_row<T: Real>(x: &Tensor<T>, width: usize, len: usize) -> Result<Tensor<T>> {
    if x.rank() != 2 || x.shape()[0] > len || width == 0 {
        return Err(Error::shape(
            "place_first_row",
            format!("{:?} into width {width}, length {len}", x.shape()),
        ));
    }
    let m = x.shape()[1];
    let mut out = Tensor::zeros(&[width, len, m]);
    out.data_mut()[..x.len()].copy_from_slice(x.data());
    Ok(out)
}

/// Returns the summed NLL and the row-wise softmax probabilities.
pub(crate) fn cross_entropy_forward<T: Real>(
    logits: &Tensor<T>,
    targets: &[Option<usize>],
) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.shape()[0] != targets.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {:?} for {} targets", logits.shape(), targets.len()),
        ));
    }
    let v = logits.shape()[1];
    let log_probs = logits.log_softmax()?;
    let mut total = T::zero();
    for (row, target) in log_probs.data().chunks_exact(v).zip(targets) {
        if let Some(t) = *target {
            if t >= v {
                return Err(Error::Token { id: t, vocab: v });
            }
            total -= row[t];
        }
    }
    Ok((total, log_probs.map(|x| x.exp())))
}
