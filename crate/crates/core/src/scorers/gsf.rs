use std::sync::Arc;

use rand::seq::SliceRandom;

use super::{shared_mask, GsfInference, DENSE};
use crate::error::{Error, Result};
use crate::layers::{dense_block, DenseBlockSpec, ForwardCtx, ListLayout};
use crate::numeric::{Matrix, Mode, NodeId, ParamStore, Real, Tape};
use crate::rng::SeedPath;

/// Number of ordered groups of `m` distinct documents out of `n`,
/// saturating at `u128::MAX`.
pub fn group_count(n: usize, m: usize) -> u128 {
    if m > n {
        return 0;
    }
    let mut count: u128 = 1;
    for k in (n - m + 1)..=n {
        count = count.saturating_mul(k as u128);
    }
    count
}

/// Every ordered group of `m` distinct positions out of `0..n`, in
/// lexicographic order.
pub fn enumerate_groups(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn extend(n: usize, m: usize, prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == m {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(n, m, prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    if m <= n {
        extend(n, m, &mut Vec::with_capacity(m), &mut vec![false; n], &mut out);
    }
    out
}

/// Windows of `m` consecutive entries of a seeded shuffle of `0..n`,
/// starting every `stride` entries and wrapping around the end. Lists
/// shorter than `m` repeat documents within a window.
pub fn rolling_window_groups(n: usize, m: usize, stride: usize, seed: SeedPath) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.rng());
    (0..n)
        .step_by(stride.max(1))
        .map(|start| (0..m).map(|t| order[(start + t) % n]).collect())
        .collect()
}

fn list_groups(
    b: usize,
    n: usize,
    m: usize,
    inference: &GsfInference,
    max_groups: u64,
    ctx: &ForwardCtx<impl Real>,
) -> Result<Vec<Vec<usize>>> {
    match inference {
        GsfInference::Exact => {
            if m > n {
                return Err(Error::Config(format!(
                    "exact GSF needs group size {m} ≤ list size, got {n} documents"
                )));
            }
            let groups = group_count(n, m);
            if groups > u128::from(max_groups) {
                return Err(Error::GroupBudget {
                    groups,
                    n_docs: n,
                    budget: max_groups,
                });
            }
            Ok(enumerate_groups(n, m))
        }
        GsfInference::Subsample { stride, seed } => {
            let path = match ctx.mode {
                Mode::Train => ctx.seed.child("gsf"),
                Mode::Infer => SeedPath::new(*seed),
            };
            Ok(rolling_window_groups(n, m, *stride, path.index(b as u64)))
        }
    }
}

/// Pools the sub-network's per-position outputs over the groups each
/// document belongs to: the score of a document is the mean of the outputs
/// it received.
#[allow(clippy::too_many_arguments)]
pub(super) fn forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: NodeId,
    layout: &ListLayout,
    dense: &DenseBlockSpec,
    m: usize,
    inference: &GsfInference,
    max_groups: u64,
    ctx: &mut ForwardCtx<T>,
) -> Result<NodeId> {
    let rows = layout.rows();
    let mut position_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut hits = vec![0usize; rows];
    for b in 0..layout.n_lists {
        let valid = layout.valid_rows(b);
        for group in list_groups(b, valid.len(), m, inference, max_groups, ctx)? {
            for (t, &local) in group.iter().enumerate() {
                let global = valid[local];
                position_rows[t].push(global);
                hits[global] += 1;
            }
        }
    }
    let position_rows: Vec<Arc<Vec<usize>>> = position_rows.into_iter().map(Arc::new).collect();
    let n_groups = position_rows[0].len();

    let mut parts = Vec::with_capacity(m);
    for idx in &position_rows {
        parts.push(tape.gather_rows(x, Arc::clone(idx))?);
    }
    let grouped = if m == 1 { parts[0] } else { tape.concat_cols(&parts)? };
    let outputs = dense_block(tape, store, DENSE, grouped, &shared_mask(n_groups), dense, ctx)?;

    let mut pooled = None;
    for (t, idx) in position_rows.iter().enumerate() {
        let column = tape.slice_cols(outputs, t, 1)?;
        let scattered = tape.scatter_add_rows(column, Arc::clone(idx), rows)?;
        pooled = Some(match pooled {
            None => scattered,
            Some(acc) => tape.add(acc, scattered)?,
        });
    }
    let inverse = hits
        .iter()
        .map(|&h| if h == 0 { T::zero() } else { T::one() / T::from_usize(h).unwrap_or_else(T::one) })
        .collect::<Vec<_>>();
    let pooled = pooled.expect("group size is at least 1");
    tape.mul_const(pooled, Arc::new(Matrix::column_vector(&inverse)))
}
