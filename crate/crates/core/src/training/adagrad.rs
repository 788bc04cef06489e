use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore, Real};

/// Adagrad with per-coordinate squared-gradient accumulators starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Adagrad<T> {
    pub learning_rate: f64,
    pub epsilon: f64,
    accumulators: IndexMap<String, Matrix<T>>,
}

impl<T: Real> Adagrad<T> {
    pub fn new(learning_rate: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::Config(format!("Adagrad epsilon must be non-negative, got {epsilon}")));
        }
        Ok(Adagrad {
            learning_rate,
            epsilon,
            accumulators: IndexMap::new(),
        })
    }

    /// `acc += g²; p -= lr · g / (√acc + ε)` for every trainable value.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        let lr = T::from_f64_lossy(self.learning_rate);
        let eps = T::from_f64_lossy(self.epsilon);
        let accumulators = &mut self.accumulators;
        store.for_each_trainable_mut(|name, value, grad| {
            let acc = accumulators
                .entry(name.to_string())
                .or_insert_with(|| Matrix::zeros(value.rows(), value.cols()));
            for ((p, a), &g) in value
                .data_mut()
                .iter_mut()
                .zip(acc.data_mut().iter_mut())
                .zip(grad.data())
            {
                *a = *a + g * g;
                *p = *p - lr * g / (a.sqrt() + eps);
            }
        });
    }

    pub fn accumulators(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.accumulators.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn set_accumulator(&mut self, name: impl Into<String>, value: Matrix<T>) {
        self.accumulators.insert(name.into(), value);
    }
}
