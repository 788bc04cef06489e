//! Stateful and stochastic ops layered on the tape primitives.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::real::{lit, Real};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::SeedPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Running batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub mean: Option<Vec<T>>,
    pub var: Option<Vec<T>>,
}

impl<T> Default for BatchNormState<T> {
    fn default() -> Self {
        BatchNormState {
            mean: None,
            var: None,
        }
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` so inference is
/// the identity.
pub fn dropout<T: Real>(
    tape: &mut Tape<T>,
    x: NodeId,
    rate: f64,
    mode: Mode,
    seed: SeedPath,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x);
    }
    let (rows, cols) = tape.shape(x);
    let keep = lit::<T>(1.0 / (1.0 - rate));
    let mut rng = seed.rng();
    let data = (0..rows * cols)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mask = Matrix::from_vec(rows, cols, data)?;
    tape.mul_const(x, Arc::new(mask))
}

/// Batch normalization. In train mode statistics come from the rows flagged in
/// `row_mask` and the updated running state is returned; infer mode uses
/// `state` only.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Real>(
    tape: &mut Tape<T>,
    x: NodeId,
    gain: NodeId,
    bias: NodeId,
    mode: Mode,
    state: &BatchNormState<T>,
    row_mask: Arc<Vec<bool>>,
    momentum: f64,
    eps: f64,
) -> Result<(NodeId, Option<BatchNormState<T>>)> {
    match mode {
        Mode::Train => {
            let (out, stats) = tape.batch_norm_train(x, gain, bias, row_mask, lit(eps))?;
            let m = lit::<T>(momentum);
            let blend = |old: &Option<Vec<T>>, new: Vec<T>| match old {
                Some(old) if old.len() == new.len() => old
                    .iter()
                    .zip(&new)
                    .map(|(&o, &n)| (T::one() - m) * o + m * n)
                    .collect(),
                _ => new,
            };
            let next = BatchNormState {
                mean: Some(blend(&state.mean, stats.mean)),
                var: Some(blend(&state.var, stats.var)),
            };
            Ok((out, Some(next)))
        }
        Mode::Infer => {
            let (Some(mean), Some(var)) = (&state.mean, &state.var) else {
                return Err(Error::UninitializedStats("batch_norm".into()));
            };
            let out = tape.batch_norm_infer(x, gain, bias, mean, var, lit(eps))?;
            Ok((out, None))
        }
    }
}
