use ndarray::Array2;

use super::Scalar;
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// One learnable tensor plus its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Array2<T>,
    pub grad: Array2<T>,
}

/// Flat registry of all learnable parameters of a model.
///
/// Registration order is the canonical order for gradient reduction,
/// optimizer updates and serialization, so identical construction sequences
/// yield bitwise-identical training trajectories.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Array2<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.raw_dim() != delta.raw_dim() {
            return Err(Error::shape(p.grad.shape(), delta.shape()));
        }
        p.grad += delta;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Total number of scalar elements across all parameters.
    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
