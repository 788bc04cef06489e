//! Listwise losses over masked score columns.
//!
//! Both losses are minimized: softmax cross-entropy is the negated
//! log-likelihood of the label distribution, and ApproxNDCG is the negated
//! smoothed NDCG, so `-approx_ndcg ≤ 1`. Values and gradients are computed in
//! closed form per list and attached to the tape as one fused node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, NodeId, Real, Tape};

/// Temperature of the pairwise sigmoids in the approximate rank.
pub const DEFAULT_ETA: f64 = 0.1;

fn default_eta() -> f64 {
    DEFAULT_ETA
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "LossRepr")]
pub enum LossSpec {
    #[default]
    Softmax,
    ApproxNdcg {
        #[serde(default = "default_eta")]
        eta: f64,
    },
}

/// Deserialization mirror of [`LossSpec`]; the empty struct variant makes
/// stray keys next to `kind = "softmax"` an error.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LossRepr {
    Softmax {},
    ApproxNdcg {
        #[serde(default = "default_eta")]
        eta: f64,
    },
}

impl From<LossRepr> for LossSpec {
    fn from(r: LossRepr) -> Self {
        match r {
            LossRepr::Softmax {} => LossSpec::Softmax,
            LossRepr::ApproxNdcg { eta } => LossSpec::ApproxNdcg { eta },
        }
    }
}

impl LossSpec {
    pub fn approx_ndcg() -> Self {
        LossSpec::ApproxNdcg { eta: DEFAULT_ETA }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Softmax => "softmax",
            LossSpec::ApproxNdcg { .. } => "approx_ndcg",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::ApproxNdcg { eta } if !(*eta > 0.0 && eta.is_finite()) => {
                Err(Error::Config(format!("ApproxNDCG eta must be positive, got {eta}")))
            }
            _ => Ok(()),
        }
    }

    /// Loss and gradient of one list of valid documents.
    pub fn list_loss(&self, labels: &[u32], scores: &[f64]) -> Result<(f64, Vec<f64>)> {
        match *self {
            LossSpec::Softmax => softmax_ce(labels, scores),
            LossSpec::ApproxNdcg { eta } => approx_ndcg(labels, scores, eta),
        }
    }

    /// Mean loss over the lists of a padded score column, recorded on the
    /// tape. Padded slots receive zero gradient.
    pub fn batch_loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        scores: NodeId,
        labels: &[u32],
        mask: &[bool],
        list_len: usize,
    ) -> Result<NodeId> {
        let column = tape.value(scores);
        let rows = column.rows();
        if column.cols() != 1 || labels.len() != rows || mask.len() != rows || list_len == 0 || rows % list_len != 0 {
            return Err(Error::Shape {
                op: "batch_loss",
                lhs: column.shape(),
                rhs: (labels.len(), list_len),
            });
        }
        let n_lists = rows / list_len;
        let mut total = 0.0;
        let mut grad = vec![T::zero(); rows];
        for b in 0..n_lists {
            let valid: Vec<usize> = (b * list_len..(b + 1) * list_len).filter(|&r| mask[r]).collect();
            let y: Vec<u32> = valid.iter().map(|&r| labels[r]).collect();
            let s: Vec<f64> = valid.iter().map(|&r| column.data()[r].to_f64().unwrap_or(f64::NAN)).collect();
            let (value, g) = self.list_loss(&y, &s)?;
            total += value;
            for (&r, gi) in valid.iter().zip(g) {
                grad[r] = T::from_f64_lossy(gi / n_lists as f64);
            }
        }
        let value = T::from_f64_lossy(total / n_lists as f64);
        tape.scalar_fn(scores, value, Matrix::column_vector(&grad))
    }
}

fn require_relevant(labels: &[u32], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::Shape {
            op: "loss",
            lhs: (labels.len(), 1),
            rhs: (scores.len(), 1),
        });
    }
    if labels.iter().all(|&y| y == 0) {
        return Err(Error::Data("list without relevant documents reached the loss".into()));
    }
    Ok(())
}

/// `-Σ_i (y_i/Σy) log softmax(s)_i` and its gradient `softmax(s) - y/Σy`.
pub fn softmax_ce(labels: &[u32], scores: &[f64]) -> Result<(f64, Vec<f64>)> {
    require_relevant(labels, scores)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let total: f64 = labels.iter().map(|&y| f64::from(y)).sum();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&y, &s) in labels.iter().zip(scores) {
        let target = f64::from(y) / total;
        loss -= target * (s - lse);
        grad.push((s - lse).exp() - target);
    }
    Ok((loss, grad))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smooth rank `1 + Σ_{j≠i} σ(η(s_j - s_i))`: document `i` gains almost a
/// full position for every document scored clearly above it.
pub fn approx_rank(scores: &[f64], eta: f64) -> Vec<f64> {
    let n = scores.len();
    (0..n)
        .map(|i| {
            1.0 + (0..n)
                .filter(|&j| j != i)
                .map(|j| sigmoid(eta * (scores[j] - scores[i])))
                .sum::<f64>()
        })
        .collect()
}

fn gain(y: u32) -> f64 {
    2f64.powi(y as i32) - 1.0
}

/// Ideal DCG of the whole list.
pub(crate) fn ideal_dcg(labels: &[u32]) -> f64 {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted
        .iter()
        .enumerate()
        .map(|(r, &y)| gain(y) / (r as f64 + 2.0).log2())
        .sum()
}

/// `-(1/DCG*) Σ_i (2^{y_i} - 1) / log2(1 + r̂_i)` and its gradient.
pub fn approx_ndcg(labels: &[u32], scores: &[f64], eta: f64) -> Result<(f64, Vec<f64>)> {
    require_relevant(labels, scores)?;
    let n = scores.len();
    let ranks = approx_rank(scores, eta);
    let z = ideal_dcg(labels);
    let ln2 = std::f64::consts::LN_2;
    let mut loss = 0.0;
    // a_i = ∂loss/∂r̂_i
    let mut a = Vec::with_capacity(n);
    for (&y, &r) in labels.iter().zip(&ranks) {
        let g = gain(y) / z;
        let l = (1.0 + r).ln();
        loss -= g * ln2 / l;
        a.push(g * ln2 / ((1.0 + r) * l * l));
    }
    let grad = (0..n)
        .map(|k| {
            eta * (0..n)
                .filter(|&i| i != k)
                .map(|i| {
                    let p = sigmoid(eta * (scores[k] - scores[i]));
                    p * (1.0 - p) * (a[i] - a[k])
                })
                .sum::<f64>()
        })
        .collect();
    Ok((loss, grad))
}
