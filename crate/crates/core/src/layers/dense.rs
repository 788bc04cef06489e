use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{glorot, ForwardCtx};
use crate::error::{Error, Result};
use crate::numeric::{batch_norm, dropout, BatchNormState, Matrix, NodeId, ParamStore, Real, Tape};
use crate::rng::SeedPath;

/// Stack of FC-BN-ReLU layers followed by a linear projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseBlockSpec {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_true")]
    pub input_batch_norm: bool,
    #[serde(default = "default_momentum")]
    pub batch_norm_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub batch_norm_epsilon: f64,
}

fn default_true() -> bool {
    true
}

fn default_momentum() -> f64 {
    0.1
}

fn default_bn_eps() -> f64 {
    1e-5
}

impl DenseBlockSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        DenseBlockSpec {
            widths,
            dropout: 0.0,
            input_batch_norm: true,
            batch_norm_momentum: default_momentum(),
            batch_norm_epsilon: default_bn_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::Config("dense layer widths must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.batch_norm_momentum) {
            return Err(Error::Config("batch-norm momentum outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Trainable scalars for an `input → … → output` block.
    pub fn param_count(&self, input: usize, output: usize) -> usize {
        let mut n = if self.input_batch_norm { 2 * input } else { 0 };
        let mut prev = input;
        for &w in &self.widths {
            n += prev * w + w + 2 * w;
            prev = w;
        }
        n + prev * output + output
    }
}

fn insert_bn<T: Real>(store: &mut ParamStore<T>, prefix: &str, width: usize) {
    store.insert(format!("{prefix}.gain"), Matrix::filled(1, width, T::one()));
    store.insert(format!("{prefix}.bias"), Matrix::zeros(1, width));
    store.insert_buffer(format!("{prefix}.running_mean"), Matrix::zeros(1, width));
    store.insert_buffer(format!("{prefix}.running_var"), Matrix::filled(1, width, T::one()));
}

/// Registers the block's parameters under `prefix`.
pub fn init_dense<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input: usize,
    output: usize,
    spec: &DenseBlockSpec,
    seed: SeedPath,
) {
    if spec.input_batch_norm {
        insert_bn(store, &format!("{prefix}.input_bn"), input);
    }
    let mut prev = input;
    for (i, &w) in spec.widths.iter().enumerate() {
        let name = format!("{prefix}.fc{i}");
        store.insert(format!("{name}.weight"), glorot(prev, w, seed.child(&name)));
        store.insert(format!("{name}.bias"), Matrix::zeros(1, w));
        insert_bn(store, &format!("{name}.bn"), w);
        prev = w;
    }
    let name = format!("{prefix}.out");
    store.insert(format!("{name}.weight"), glorot(prev, output, seed.child(&name)));
    store.insert(format!("{name}.bias"), Matrix::zeros(1, output));
}

fn linear<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    name: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w = tape.param(store, &format!("{name}.weight"))?;
    let b = tape.param(store, &format!("{name}.bias"))?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn bn_layer<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    name: &str,
    x: NodeId,
    row_mask: &Arc<Vec<bool>>,
    spec: &DenseBlockSpec,
    ctx: &mut ForwardCtx<T>,
) -> Result<NodeId> {
    let gain = tape.param(store, &format!("{name}.gain"))?;
    let bias = tape.param(store, &format!("{name}.bias"))?;
    let mean_name = format!("{name}.running_mean");
    let var_name = format!("{name}.running_var");
    let state = BatchNormState {
        mean: store.value(&mean_name).ok().map(|m| m.data().to_vec()),
        var: store.value(&var_name).ok().map(|m| m.data().to_vec()),
    };
    let (y, next) = batch_norm(
        tape,
        x,
        gain,
        bias,
        ctx.mode,
        &state,
        Arc::clone(row_mask),
        spec.batch_norm_momentum,
        spec.batch_norm_epsilon,
    )
    .map_err(|e| match e {
        Error::UninitializedStats(_) => Error::UninitializedStats(name.to_string()),
        other => other,
    })?;
    if let Some(next) = next {
        if let (Some(mean), Some(var)) = (next.mean, next.var) {
            ctx.bn_updates.push((mean_name, Matrix::row_vector(&mean)));
            ctx.bn_updates.push((var_name, Matrix::row_vector(&var)));
        }
    }
    Ok(y)
}

/// Applies the block row-wise. Batch-norm statistics are taken over the rows
/// flagged in `row_mask`; other rows are still transformed but never
/// influence valid ones.
pub fn dense_block<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: NodeId,
    row_mask: &Arc<Vec<bool>>,
    spec: &DenseBlockSpec,
    ctx: &mut ForwardCtx<T>,
) -> Result<NodeId> {
    let mut h = x;
    if spec.input_batch_norm {
        h = bn_layer(tape, store, &format!("{prefix}.input_bn"), h, row_mask, spec, ctx)?;
    }
    for i in 0..spec.widths.len() {
        let name = format!("{prefix}.fc{i}");
        h = dropout(tape, h, spec.dropout, ctx.mode, ctx.seed.child(&name))?;
        h = linear(tape, store, &name, h)?;
        h = bn_layer(tape, store, &format!("{name}.bn"), h, row_mask, spec, ctx)?;
        h = tape.relu(h);
    }
    linear(tape, store, &format!("{prefix}.out"), h)
}
