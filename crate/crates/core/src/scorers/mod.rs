//! Scoring functions mapping a document list to one score per document.
//!
//! All three families share [`Scorer::forward`]: univariate scoring applies
//! the dense head to each document alone, GSF pools a sub-network over
//! document groups, and attn-DIN concatenates each document's raw features
//! with its self-attention embedding before the dense head.

mod gsf;
mod spec;

use std::sync::Arc;

pub use gsf::{enumerate_groups, group_count, rolling_window_groups};
pub use spec::{GsfInference, ScorerFamily, ScorerSpec};

use crate::data::ListBatch;
use crate::error::{Error, Result};
use crate::layers::{attention_stack, dense_block, init_attention, init_dense, ForwardCtx, ListLayout};
use crate::numeric::{Matrix, NodeId, ParamStore, Real, Tape};
use crate::rng::SeedPath;

const DENSE: &str = "dense";
const ATTENTION: &str = "attention";

/// Model-ready batch: one row per document slot in precision `T`.
#[derive(Debug, Clone)]
pub struct ModelInput<T> {
    pub features: Matrix<T>,
    pub layout: ListLayout,
}

impl<T: Real> ModelInput<T> {
    pub fn new(features: Matrix<T>, layout: ListLayout) -> Result<Self> {
        if features.rows() != layout.rows() {
            return Err(Error::Shape {
                op: "model_input",
                lhs: features.shape(),
                rhs: (layout.rows(), 0),
            });
        }
        Ok(ModelInput { features, layout })
    }

    /// A single fully valid list.
    pub fn single(features: Matrix<T>) -> Self {
        let layout = ListLayout::single(features.rows());
        ModelInput { features, layout }
    }

    /// Converts a padded batch, appending the query context (if any) to
    /// every document row of its list.
    pub fn from_batch(batch: &ListBatch) -> Self {
        let layout = ListLayout::new(batch.n_lists(), batch.list_len, batch.mask.clone());
        let doc: Matrix<T> = batch.features.cast();
        let features = match &batch.query_features {
            None => doc,
            Some(qf) => {
                let width = doc.cols() + qf.cols();
                let mut m = Matrix::zeros(doc.rows(), width);
                for r in 0..doc.rows() {
                    let b = r / batch.list_len;
                    let row = m.row_mut(r);
                    row[..doc.cols()].copy_from_slice(doc.row(r));
                    for (o, &v) in row[doc.cols()..].iter_mut().zip(qf.row(b)) {
                        *o = T::from_f64_lossy(f64::from(v));
                    }
                }
                m
            }
        };
        ModelInput { features, layout }
    }
}

/// Scores of a padded batch. Padded slots hold [`ScoreVector::sentinel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T> {
    pub scores: Vec<T>,
    pub mask: Vec<bool>,
    pub list_len: usize,
}

impl<T: Real> ScoreVector<T> {
    /// Lowest finite value, so padded slots sort after every real score.
    pub fn sentinel() -> T {
        T::min_value()
    }

    fn from_column(column: &Matrix<T>, layout: &ListLayout) -> Self {
        let scores = column
            .data()
            .iter()
            .zip(layout.mask.iter())
            .map(|(&s, &m)| if m { s } else { Self::sentinel() })
            .collect();
        ScoreVector {
            scores,
            mask: layout.mask.to_vec(),
            list_len: layout.list_len,
        }
    }

    pub fn n_lists(&self) -> usize {
        self.scores.len().checked_div(self.list_len).unwrap_or(0)
    }

    /// Scores of list `b`, padded slots included.
    pub fn list(&self, b: usize) -> &[T] {
        &self.scores[b * self.list_len..(b + 1) * self.list_len]
    }

    /// Scores of the valid documents of list `b`, in document order.
    pub fn valid(&self, b: usize) -> Vec<T> {
        let range = b * self.list_len..(b + 1) * self.list_len;
        self.scores[range.clone()]
            .iter()
            .zip(&self.mask[range])
            .filter(|(_, &m)| m)
            .map(|(&s, _)| s)
            .collect()
    }
}

/// A scorer topology. Parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    spec: ScorerSpec,
}

impl Scorer {
    pub fn new(spec: ScorerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Scorer { spec })
    }

    pub fn spec(&self) -> &ScorerSpec {
        &self.spec
    }

    /// Freshly initialized parameters and batch-norm running statistics.
    pub fn init_params<T: Real>(&self, seed: SeedPath) -> ParamStore<T> {
        let mut store = ParamStore::new();
        let f = self.spec.input_width();
        match &self.spec.family {
            ScorerFamily::Univariate => {
                init_dense(&mut store, DENSE, f, 1, &self.spec.dense, seed.child(DENSE));
            }
            ScorerFamily::Gsf { group_size, .. } => {
                let m = *group_size;
                init_dense(&mut store, DENSE, m * f, m, &self.spec.dense, seed.child(DENSE));
            }
            ScorerFamily::AttnDin { attention } => {
                init_attention(&mut store, ATTENTION, f, attention, seed.child(ATTENTION));
                let head_in = f + attention.width;
                init_dense(&mut store, DENSE, head_in, 1, &self.spec.dense, seed.child(DENSE));
            }
        }
        store
    }

    /// Records the scoring graph; returns a `rows × 1` column with padded
    /// slots zeroed.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &ModelInput<T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<NodeId> {
        let layout = &input.layout;
        if input.features.cols() != self.spec.input_width() {
            return Err(Error::Shape {
                op: "scorer input",
                lhs: input.features.shape(),
                rhs: (layout.rows(), self.spec.input_width()),
            });
        }
        for b in 0..layout.n_lists {
            if !layout.list_mask(b).iter().any(|&m| m) {
                return Err(Error::DegenerateRow { op: "scorer", row: b });
            }
        }
        let x = tape.constant(input.features.clone());
        let x = tape.mask_rows(x, &layout.mask)?;
        let scores = match &self.spec.family {
            ScorerFamily::Univariate => {
                dense_block(tape, store, DENSE, x, &layout.mask, &self.spec.dense, ctx)?
            }
            ScorerFamily::Gsf {
                group_size,
                inference,
                max_groups,
            } => gsf::forward(
                tape,
                store,
                x,
                layout,
                &self.spec.dense,
                *group_size,
                inference,
                *max_groups,
                ctx,
            )?,
            ScorerFamily::AttnDin { attention } => {
                let embedding = attention_stack(tape, store, ATTENTION, x, layout, attention, ctx)?;
                let wide = tape.concat_cols(&[x, embedding])?;
                dense_block(tape, store, DENSE, wide, &layout.mask, &self.spec.dense, ctx)?
            }
        };
        tape.mask_rows(scores, &layout.mask)
    }

    /// Inference-mode scores (no dropout, running batch-norm statistics).
    pub fn score<T: Real>(&self, store: &ParamStore<T>, input: &ModelInput<T>) -> Result<ScoreVector<T>> {
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::infer();
        let out = self.forward(&mut tape, store, input, &mut ctx)?;
        Ok(ScoreVector::from_column(tape.value(out), &input.layout))
    }

    /// Scores through an explicit context, e.g. a train-mode pass.
    pub fn score_with<T: Real>(
        &self,
        store: &ParamStore<T>,
        input: &ModelInput<T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<ScoreVector<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, input, ctx)?;
        Ok(ScoreVector::from_column(tape.value(out), &input.layout))
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }
}

/// Trainable scalars of an instantiated parameter set.
pub fn param_count<T: Real>(store: &ParamStore<T>) -> usize {
    store.num_trainable_scalars()
}

pub(crate) fn shared_mask(n: usize) -> Arc<Vec<bool>> {
    Arc::new(vec![true; n])
}
