//! Dense tensors, the named parameter registry and the gradient tape.

mod tape;

pub use tape::{ScatterPlan, Tape, Var, WorkCounters};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Contiguous row-major array with an optional gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::contract(
                "tensor",
                format!("dims {dims:?} need {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { dims, data, grad: None })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        let dims = dims.into();
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![T::zero(); n],
            grad: None,
        }
    }

    pub fn full(dims: impl Into<Vec<usize>>, v: T) -> Self {
        let mut t = Self::zeros(dims);
        t.data.fill(v);
        t
    }

    pub fn scalar(v: T) -> Self {
        Self {
            dims: Vec::new(),
            data: vec![v],
            grad: None,
        }
    }

    pub fn from_f64(dims: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| T::of(v)).collect())
    }

    /// Marks the tensor as trainable, allocating a zeroed accumulator.
    pub fn with_grad(mut self) -> Self {
        if self.grad.is_none() {
            self.grad = Some(vec![T::zero(); self.data.len()]);
        }
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Mutable access to values and gradient at once, for optimizers.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }
}

/// Ordered name → trainable tensor map. Iteration follows insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamRegistry<T> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamRegistry<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract("registry", format!("duplicate parameter {name:?}")));
        }
        let (idx, _) = self.params.insert_full(name, tensor.with_grad());
        Ok(idx)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn by_index(&self, idx: usize) -> Option<(&str, &Tensor<T>)> {
        self.params.get_index(idx).map(|(k, v)| (k.as_str(), v))
    }

    pub fn by_index_mut(&mut self, idx: usize) -> Option<(&str, &mut Tensor<T>)> {
        self.params.get_index_mut(idx).map(|(k, v)| (k.as_str(), v))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// Adds `scale * grad` for each `(param index, grad)` pair.
    pub fn accumulate_grads<'a>(&mut self, grads: impl IntoIterator<Item = (usize, &'a [T])>, scale: T) {
        for (idx, g) in grads {
            let (_, t) = self.params.get_index_mut(idx).expect("gradient for a registered parameter");
            let acc = t.grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
            for (a, &v) in acc.iter_mut().zip(g) {
                *a = *a + scale * v;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamRegistry<U> {
        ParamRegistry {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_length_checked() {
        assert!(Tensor::<f64>::new([2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::new([2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(!t.requires_grad());
        assert_eq!(t.with_grad().grad().unwrap().len(), 6);
    }

    #[test]
    fn registry_rejects_duplicates_and_keeps_order() {
        let mut r = ParamRegistry::<f32>::new();
        r.insert("b", Tensor::zeros([2])).unwrap();
        r.insert("a", Tensor::zeros([3])).unwrap();
        assert!(r.insert("a", Tensor::zeros([1])).is_err());
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["b", "a"]);
        assert_eq!(r.total_elements(), 5);
        assert!(r.get("a").unwrap().requires_grad());
    }
}
