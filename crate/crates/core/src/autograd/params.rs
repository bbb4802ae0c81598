use indexmap::IndexMap;

use super::{Gradients, Graph, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Named trainable tensors in construction order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

/// Gradient per parameter name, aligned with the store's order.
pub type ParamGrads<T> = IndexMap<String, Tensor<T>>;

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParameterStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Makes every parameter available on a graph.
    pub fn bind<G: Graph<T>>(&self, g: &mut G) -> BoundParams<G::V> {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), g.constant(v.clone())))
                .collect(),
        }
    }
}

/// Graph handles of a bound [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct BoundParams<V> {
    vars: IndexMap<String, V>,
}

impl<V: Clone> BoundParams<V> {
    pub fn get(&self, name: &str) -> Result<V> {
        self.vars
            .get(name)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &V)> {
        self.vars.iter()
    }
}

impl BoundParams<Var> {
    /// Extracts per-parameter gradients; parameters the loss does not reach
    /// get zeros.
    pub fn gradients<T: Real>(&self, tape: &Tape<T>, grads: &mut Gradients<T>) -> ParamGrads<T> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(&v).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
