//! Neural building blocks shared by the scorers.

mod attention;
mod dense;

use std::sync::Arc;

pub use attention::{
    attention_block, attention_stack, init_attention, multi_head_self_attention,
    scaled_dot_attention, segment_attention, AttentionBlockSpec,
};
pub use dense::{dense_block, init_dense, DenseBlockSpec};

use crate::numeric::{Matrix, Mode, ParamStore, Real};
use crate::rng::SeedPath;

/// Per-forward-pass state: mode, dropout seed, and the batch-norm running
/// statistics produced in train mode (applied by the caller after the step).
pub struct ForwardCtx<T> {
    pub mode: Mode,
    pub seed: SeedPath,
    pub bn_updates: Vec<(String, Matrix<T>)>,
}

impl<T: Real> ForwardCtx<T> {
    pub fn infer() -> Self {
        ForwardCtx {
            mode: Mode::Infer,
            seed: SeedPath::new(0),
            bn_updates: Vec::new(),
        }
    }

    pub fn train(seed: SeedPath) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            seed,
            bn_updates: Vec::new(),
        }
    }

    /// Writes collected running statistics into `store`.
    pub fn apply_updates(&mut self, store: &mut ParamStore<T>) -> crate::Result<()> {
        for (name, value) in self.bn_updates.drain(..) {
            store.set_value(&name, value)?;
        }
        Ok(())
    }
}

/// Row layout of a padded batch: `n_lists` blocks of `list_len` rows.
#[derive(Debug, Clone)]
pub struct ListLayout {
    pub n_lists: usize,
    pub list_len: usize,
    pub mask: Arc<Vec<bool>>,
}

impl ListLayout {
    pub fn new(n_lists: usize, list_len: usize, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), n_lists * list_len, "mask covers every slot");
        ListLayout {
            n_lists,
            list_len,
            mask: Arc::new(mask),
        }
    }

    /// A single list with every slot valid.
    pub fn single(n: usize) -> Self {
        Self::new(1, n, vec![true; n])
    }

    pub fn rows(&self) -> usize {
        self.n_lists * self.list_len
    }

    pub fn list_mask(&self, b: usize) -> &[bool] {
        &self.mask[b * self.list_len..(b + 1) * self.list_len]
    }

    /// Global row indices of the valid documents of list `b`.
    pub fn valid_rows(&self, b: usize) -> Vec<usize> {
        let base = b * self.list_len;
        (0..self.list_len)
            .filter(|&j| self.mask[base + j])
            .map(|j| base + j)
            .collect()
    }
}

/// Symmetric uniform initialization scaled by fan-in and fan-out.
pub(crate) fn glorot<T: Real>(fan_in: usize, fan_out: usize, seed: SeedPath) -> Matrix<T> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Matrix::uniform(fan_in, fan_out, limit, &mut seed.rng())
}
