//! Masked multi-head scaled-dot self-attention over document lists.
//!
//! Documents are rows; no positional information enters anywhere, so every
//! function here commutes with row permutations applied within a list.

use serde::{Deserialize, Serialize};

use super::{glorot, ForwardCtx, ListLayout};
use crate::error::{Error, Result};
use crate::numeric::{lit, Matrix, NodeId, ParamStore, Real, Tape};
use crate::rng::SeedPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionBlockSpec {
    /// Model width `k`; each head works in `k / heads` dimensions.
    pub width: usize,
    #[serde(default = "one")]
    pub heads: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_epsilon: f64,
}

fn one() -> usize {
    1
}

fn default_ln_eps() -> f64 {
    1e-6
}

impl AttentionBlockSpec {
    pub fn new(width: usize, heads: usize, layers: usize) -> Self {
        AttentionBlockSpec {
            width,
            heads,
            layers,
            layer_norm_epsilon: default_ln_eps(),
        }
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.layers == 0 {
            return Err(Error::Config(
                "attention width, heads and layers must be at least 1".into(),
            ));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "attention width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    /// Input projection plus, per layer, Q/K/V and output projections and
    /// the layer-norm gain and bias.
    pub fn param_count(&self, input: usize) -> usize {
        let k = self.width;
        input * k + self.layers * (4 * k * k + 2 * k)
    }
}

/// Registers the input projection and every attention layer under `prefix`.
pub fn init_attention<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input: usize,
    spec: &AttentionBlockSpec,
    seed: SeedPath,
) {
    let k = spec.width;
    let d = spec.head_width();
    let name = format!("{prefix}.input_proj");
    store.insert(name.clone(), glorot(input, k, seed.child(&name)));
    for l in 0..spec.layers {
        for h in 0..spec.heads {
            for part in ["query", "key", "value"] {
                let name = format!("{prefix}.layer{l}.head{h}.{part}");
                store.insert(name.clone(), glorot(k, d, seed.child(&name)));
            }
        }
        let name = format!("{prefix}.layer{l}.output");
        store.insert(name.clone(), glorot(k, k, seed.child(&name)));
        store.insert(format!("{prefix}.layer{l}.ln.gain"), Matrix::filled(1, k, T::one()));
        store.insert(format!("{prefix}.layer{l}.ln.bias"), Matrix::zeros(1, k));
    }
}

/// `softmax(Q Kᵀ / √k) V` for one list, with padded keys excluded.
pub fn scaled_dot_attention<T: Real>(
    tape: &mut Tape<T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    key_mask: Option<&[bool]>,
) -> Result<NodeId> {
    let (q_shape, k_shape, v_shape) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if q_shape.1 != k_shape.1 {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            lhs: q_shape,
            rhs: k_shape,
        });
    }
    if k_shape.0 != v_shape.0 {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            lhs: k_shape,
            rhs: v_shape,
        });
    }
    let scale = lit::<T>(1.0 / (k_shape.1 as f64).sqrt());
    let logits = tape.matmul_nt(q, k, scale)?;
    let weights = tape.softmax_rows(logits, key_mask)?;
    tape.matmul(weights, v)
}

/// Attention applied independently within each list of a padded batch.
pub fn segment_attention<T: Real>(
    tape: &mut Tape<T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    layout: &ListLayout,
) -> Result<NodeId> {
    if layout.n_lists == 1 {
        return scaled_dot_attention(tape, q, k, v, Some(layout.list_mask(0)));
    }
    let n = layout.list_len;
    let mut parts = Vec::with_capacity(layout.n_lists);
    for b in 0..layout.n_lists {
        let qs = tape.slice_rows(q, b * n, n)?;
        let ks = tape.slice_rows(k, b * n, n)?;
        let vs = tape.slice_rows(v, b * n, n)?;
        parts.push(scaled_dot_attention(tape, qs, ks, vs, Some(layout.list_mask(b)))?);
    }
    tape.concat_rows(&parts)
}

/// `concat(head_1, …, head_h) W^O` with `head_i = Attention(X W_i^Q, X W_i^K, X W_i^V)`.
pub fn multi_head_self_attention<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: NodeId,
    layout: &ListLayout,
    spec: &AttentionBlockSpec,
) -> Result<NodeId> {
    spec.validate()?;
    let mut heads = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let wq = tape.param(store, &format!("{prefix}.head{h}.query"))?;
        let wk = tape.param(store, &format!("{prefix}.head{h}.key"))?;
        let wv = tape.param(store, &format!("{prefix}.head{h}.value"))?;
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        heads.push(segment_attention(tape, q, k, v, layout)?);
    }
    let concat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let wo = tape.param(store, &format!("{prefix}.output"))?;
    tape.matmul(concat, wo)
}

/// `layer_norm(X + MHA(X))`, with padded rows zeroed afterwards so they cannot
/// leak through later residual paths.
pub fn attention_block<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: NodeId,
    layout: &ListLayout,
    spec: &AttentionBlockSpec,
) -> Result<NodeId> {
    let attended = multi_head_self_attention(tape, store, prefix, x, layout, spec)?;
    let sum = tape.add(x, attended)?;
    let gain = tape.param(store, &format!("{prefix}.ln.gain"))?;
    let bias = tape.param(store, &format!("{prefix}.ln.bias"))?;
    let normed = tape.layer_norm(sum, gain, bias, lit(spec.layer_norm_epsilon))?;
    tape.mask_rows(normed, &layout.mask)
}

/// Input projection followed by `spec.layers` stacked attention blocks;
/// returns one interaction embedding row per document.
pub fn attention_stack<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: NodeId,
    layout: &ListLayout,
    spec: &AttentionBlockSpec,
    _ctx: &mut ForwardCtx<T>,
) -> Result<NodeId> {
    let proj = tape.param(store, &format!("{prefix}.input_proj"))?;
    let mut h = tape.matmul(x, proj)?;
    for l in 0..spec.layers {
        h = attention_block(tape, store, &format!("{prefix}.layer{l}"), h, layout, spec)?;
    }
    Ok(h)
}
