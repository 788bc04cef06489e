use std::sync::Arc;

use indexmap::IndexMap;

use super::matrix::Matrix;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry<T> {
    value: Arc<Matrix<T>>,
    grad: Matrix<T>,
    trainable: bool,
}

/// Named model state: trainable weights with gradient accumulators, plus
/// non-trainable buffers such as batch-norm running statistics.
///
/// Values are reference counted so a forward pass can bind them onto a tape
/// without copying, and evaluation threads can share a snapshot.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Entry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<T>) {
        self.insert_entry(name.into(), value, true);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Matrix<T>) {
        self.insert_entry(name.into(), value, false);
    }

    fn insert_entry(&mut self, name: String, value: Matrix<T>, trainable: bool) {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.insert(
            name,
            Entry {
                value: Arc::new(value),
                grad,
                trainable,
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.entries
            .get_index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Matrix<T>> {
        self.entries
            .get(name)
            .map(|e| e.value.as_ref())
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub(crate) fn value_arc_at(&self, index: usize) -> Arc<Matrix<T>> {
        Arc::clone(&self.entries[index].value)
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix<T>> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    /// Replaces a value; the new matrix must keep the old shape.
    pub fn set_value(&mut self, name: &str, value: Matrix<T>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                lhs: entry.value.shape(),
                rhs: value.shape(),
            });
        }
        entry.value = Arc::new(value);
        Ok(())
    }

    pub(crate) fn accumulate_grad_at(&mut self, index: usize, grad: &Matrix<T>) {
        let entry = &mut self.entries[index];
        if entry.trainable {
            entry.grad.add_assign(grad);
        }
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(n, _)| n.as_str())
    }

    /// Iterates `(name, value, trainable)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>, bool)> {
        self.entries
            .iter()
            .map(|(n, e)| (n.as_str(), e.value.as_ref(), e.trainable))
    }

    /// Mutable access to each trainable value together with its gradient.
    pub fn for_each_trainable_mut(&mut self, mut f: impl FnMut(&str, &mut Matrix<T>, &Matrix<T>)) {
        for (name, e) in self.entries.iter_mut().filter(|(_, e)| e.trainable) {
            let value = Arc::make_mut(&mut e.value);
            f(name, value, &e.grad);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable_scalars(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Global L2 norm of all trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .flat_map(|e| e.grad.data().iter())
            .map(|g| {
                let g = g.to_f64().unwrap_or(0.0);
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: T) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|g| *g = *g * factor);
        }
    }
}
