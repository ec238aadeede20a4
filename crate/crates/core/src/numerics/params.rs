use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{NumericsError, Real, Tensor};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Checks that `other` has the same names and shapes, in the same order.
    pub fn same_layout<U: Real>(&self, other: &ParamSet<U>) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// Gradient buffers aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    data: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self {
            data: params
                .tensors()
                .iter()
                .map(|t| vec![T::zero(); t.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.data[id.0]
    }

    pub fn slots(&self) -> &[Vec<T>] {
        &self.data
    }

    pub fn add_assign(&mut self, other: &Grads<T>) -> Result<(), NumericsError> {
        if self.data.len() != other.data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "grads_add",
                detail: alloc::format!("{} vs {} slots", self.data.len(), other.data.len()),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            if a.len() != b.len() {
                return Err(NumericsError::ShapeMismatch {
                    op: "grads_add",
                    detail: alloc::format!("slot {} vs {}", a.len(), b.len()),
                });
            }
            a.iter_mut().zip(b.iter()).for_each(|(x, y)| *x = *x + *y);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.data
            .iter_mut()
            .flatten()
            .for_each(|x| *x = *x * factor);
    }

    pub fn global_norm(&self) -> T {
        let sq: f64 = self
            .data
            .iter()
            .flatten()
            .fold(0.0f64, |acc, x| acc + x.as_f64() * x.as_f64());
        T::from_f64(num_traits::Float::sqrt(sq))
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|x| x.is_finite())
    }
}
