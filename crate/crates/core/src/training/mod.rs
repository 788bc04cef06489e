//! Adagrad training over list batches, evaluation, checkpoints, and the
//! synthetic max-feature task.
//!
//! Every random choice in a run derives from `TrainConfig::seed` through
//! named [`SeedPath`] children (initialization, epoch shuffles, per-step
//! dropout), so a run is reproduced from its config alone.

mod adagrad;
mod checkpoint;
mod synthetic;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adagrad::Adagrad;
pub use checkpoint::{read_meta, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use synthetic::make_synthetic_max_task;

use crate::data::{filter_no_relevant, make_batches, truncate_lists, FeatureStats, ListBatch, RankedQuery};
use crate::data::apply_normalization;
use crate::error::{Error, Result};
use crate::layers::ForwardCtx;
use crate::losses::LossSpec;
use crate::metrics::{BootstrapSpec, MetricKind, MetricReport, QueryMetrics};
use crate::numeric::{DType, ParamStore, Real, Tape};
use crate::rng::SeedPath;
use crate::scorers::{ModelInput, Scorer, ScorerSpec};

/// Metric used to pick the best checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// NDCG@5 for graded labels, MRR when every label is 0 or 1.
    #[default]
    Auto,
    Ndcg5,
    Mrr,
}

impl SelectionMetric {
    fn resolve(self, queries: &[RankedQuery]) -> SelectionMetric {
        match self {
            SelectionMetric::Auto if queries.iter().all(|q| q.labels.iter().all(|&y| y <= 1)) => SelectionMetric::Mrr,
            SelectionMetric::Auto => SelectionMetric::Ndcg5,
            other => other,
        }
    }

    fn read(self, report: &MetricReport) -> f64 {
        match self {
            SelectionMetric::Mrr => report.mean(MetricKind::Mrr, None),
            _ => report.mean(MetricKind::Ndcg, Some(5)),
        }
    }
}

fn default_lr() -> f64 {
    0.005
}
fn default_batch() -> usize {
    128
}
fn default_eval_every() -> u64 {
    100
}
fn default_max_docs() -> usize {
    200
}
fn default_precision() -> DType {
    DType::F32
}
fn default_eps() -> f64 {
    1e-8
}
fn default_eval_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub scorer: ScorerSpec,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub max_steps: u64,
    /// Evaluate every this many steps (and after the last step).
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub seed: u64,
    /// Training lists are truncated to this many documents.
    #[serde(default = "default_max_docs")]
    pub max_docs: usize,
    #[serde(default = "default_precision")]
    pub precision: DType,
    /// Rescale gradients whose global norm exceeds this value.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_eps")]
    pub adagrad_epsilon: f64,
    #[serde(default)]
    pub selection_metric: SelectionMetric,
    #[serde(default)]
    pub bootstrap: BootstrapSpec,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

impl TrainConfig {
    pub fn new(scorer: ScorerSpec, loss: LossSpec, max_steps: u64) -> Self {
        TrainConfig {
            scorer,
            loss,
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_steps,
            eval_every: default_eval_every(),
            seed: 0,
            max_docs: default_max_docs(),
            precision: default_precision(),
            clip_norm: None,
            adagrad_epsilon: default_eps(),
            selection_metric: SelectionMetric::Auto,
            bootstrap: BootstrapSpec::default(),
            eval_batch_size: default_eval_batch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scorer.validate()?;
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.max_docs == 0 {
            return Err(Error::Config("max_docs must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// A scorer with its parameters and the feature statistics its inputs are
/// normalized with.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub scorer: Scorer,
    pub params: ParamStore<T>,
    pub feature_stats: Option<FeatureStats>,
    pub step: u64,
}

impl<T: Real> Model<T> {
    pub fn init(spec: ScorerSpec, seed: SeedPath, feature_stats: Option<FeatureStats>) -> Result<Self> {
        let scorer = Scorer::new(spec)?;
        let params = scorer.init_params(seed.child("init"));
        Ok(Model {
            scorer,
            params,
            feature_stats,
            step: 0,
        })
    }

    /// Checks the feature dimension and applies the stored normalization.
    /// Files that omit trailing all-zero features are padded.
    pub fn prepare(&self, queries: Vec<RankedQuery>) -> Result<Vec<RankedQuery>> {
        let want = self.scorer.spec().n_features;
        let mut out = Vec::with_capacity(queries.len());
        for q in queries {
            if q.n_features() > want {
                return Err(Error::Data(format!(
                    "query {} has {} features, the model expects {want}",
                    q.qid,
                    q.n_features()
                )));
            }
            out.push(q.with_feature_dim(want));
        }
        match &self.feature_stats {
            Some(stats) => apply_normalization(out, stats),
            None => Ok(out),
        }
    }

    /// Inference-mode scores of already prepared queries, one vector per
    /// query in document order.
    pub fn score_queries(&self, queries: &[RankedQuery], batch_size: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(queries.len());
        for batch in make_batches(queries, batch_size.max(1), SeedPath::new(0), false) {
            let input = ModelInput::<T>::from_batch(&batch);
            let scores = self.scorer.score(&self.params, &input)?;
            for b in 0..batch.n_lists() {
                out.push(scores.valid(b).iter().map(|s| s.to_f64().unwrap_or(f64::NAN)).collect());
            }
        }
        Ok(out)
    }
}

/// Metrics of prepared queries under inference-mode scoring. Lists are never
/// truncated; queries without relevant documents are skipped by the metrics.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    queries: &[RankedQuery],
    batch_size: usize,
    bootstrap: &BootstrapSpec,
) -> Result<MetricReport> {
    let scores = model.score_queries(queries, batch_size)?;
    let per_query = queries
        .iter()
        .zip(&scores)
        .map(|(q, s)| QueryMetrics::compute(&q.qid, &q.labels, s))
        .collect();
    Ok(MetricReport::from_queries(per_query, bootstrap))
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: u64,
        loss: f64,
        lr: f64,
        grad_norm: f64,
        clipped: bool,
        wall_time_s: f64,
    },
    Eval(EvalRecord),
}

/// Validation metrics at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub ndcg: [f64; 3],
    pub mrr: f64,
    pub arp: f64,
    pub selection: f64,
}

impl EvalRecord {
    fn from_report(step: u64, report: &MetricReport, metric: SelectionMetric) -> Self {
        EvalRecord {
            step,
            ndcg: [1, 5, 10].map(|k| report.mean(MetricKind::Ndcg, Some(k))),
            mrr: report.mean(MetricKind::Mrr, None),
            arp: report.mean(MetricKind::Arp, None),
            selection: metric.read(report),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub final_model: Model<T>,
    pub best_model: Model<T>,
    pub optimizer: Adagrad<T>,
    pub history: Vec<EvalRecord>,
    pub losses: Vec<f64>,
}

impl<T> TrainOutcome<T> {
    pub fn best_step(&self) -> u64 {
        self.best_model.step
    }
}

/// One optimizer step on `batch`; returns `(loss, grad_norm, clipped)`.
fn train_step<T: Real>(
    config: &TrainConfig,
    model: &mut Model<T>,
    optimizer: &mut Adagrad<T>,
    batch: &ListBatch,
    seed: SeedPath,
) -> Result<(f64, f64, bool)> {
    let input = ModelInput::<T>::from_batch(batch);
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::train(seed);
    let scores = model.scorer.forward(&mut tape, &model.params, &input, &mut ctx)?;
    let loss = config
        .loss
        .batch_loss(&mut tape, scores, &batch.labels, &batch.mask, batch.list_len)?;
    let value = tape.value(loss).scalar().to_f64().unwrap_or(f64::NAN);
    model.params.zero_grads();
    tape.backward(loss, &mut model.params)?;
    let norm = model.params.grad_norm();
    let mut clipped = false;
    if let Some(max) = config.clip_norm {
        if norm > max {
            model.params.scale_grads(T::from_f64_lossy(max / norm));
            clipped = true;
        }
    }
    if value.is_finite() && norm.is_finite() {
        optimizer.step(&mut model.params);
        ctx.apply_updates(&mut model.params)?;
    }
    Ok((value, norm, clipped))
}

/// Trains from a fresh initialization.
///
/// `train` and `valid` must already be normalized with `feature_stats`.
/// Training queries without relevant documents are dropped and lists are
/// truncated to `config.max_docs`; validation lists are kept whole. When
/// `valid` is empty the training queries are used for model selection.
pub fn train<T: Real>(
    config: &TrainConfig,
    train: &[RankedQuery],
    valid: &[RankedQuery],
    feature_stats: Option<FeatureStats>,
    observer: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let root = SeedPath::new(config.seed);
    let train_set = truncate_lists(filter_no_relevant(train.to_vec()), config.max_docs);
    if train_set.is_empty() {
        return Err(Error::Data("no training query has a relevant document".into()));
    }
    let valid_set = if valid.is_empty() {
        train_set.clone()
    } else {
        filter_no_relevant(valid.to_vec())
    };
    let selection = config.selection_metric.resolve(&valid_set);

    let mut model = Model::<T>::init(config.scorer.clone(), root, feature_stats)?;
    model.prepare_check(&train_set)?;
    let mut optimizer = Adagrad::new(config.learning_rate, config.adagrad_epsilon)?;
    let mut history = Vec::new();
    let mut losses = Vec::new();

    let eval = |model: &Model<T>, history: &mut Vec<EvalRecord>, observer: &mut dyn FnMut(&LogRecord)| {
        let report = evaluate(model, &valid_set, config.eval_batch_size, &config.bootstrap)?;
        let record = EvalRecord::from_report(model.step, &report, selection);
        observer(&LogRecord::Eval(record.clone()));
        history.push(record);
        Ok::<f64, Error>(history.last().map_or(f64::NAN, |r| r.selection))
    };

    let mut best_model = model.clone();
    let mut best = eval(&model, &mut history, observer)?;
    let started = Instant::now();
    let mut last_finite = None;
    let mut epoch = 0u64;
    let mut batches = make_batches(&train_set, config.batch_size, root.child("epoch").index(epoch), true);

    while model.step < config.max_steps {
        let batch = match batches.next() {
            Some(b) => b,
            None => {
                epoch += 1;
                batches = make_batches(&train_set, config.batch_size, root.child("epoch").index(epoch), true);
                continue;
            }
        };
        let step = model.step + 1;
        let (loss, grad_norm, clipped) =
            train_step(config, &mut model, &mut optimizer, &batch, root.child("step").index(step))?;
        if !(loss.is_finite() && grad_norm.is_finite()) {
            return Err(Error::Divergence {
                step,
                last_finite_loss: last_finite,
            });
        }
        last_finite = Some(loss);
        losses.push(loss);
        model.step = step;
        observer(&LogRecord::Step {
            step,
            loss,
            lr: config.learning_rate,
            grad_norm,
            clipped,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        if step % config.eval_every == 0 || step == config.max_steps {
            let value = eval(&model, &mut history, observer)?;
            if value > best {
                best = value;
                best_model = model.clone();
            }
        }
    }
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        optimizer,
        history,
        losses,
    })
}

impl<T: Real> Model<T> {
    fn prepare_check(&self, queries: &[RankedQuery]) -> Result<()> {
        let want = self.scorer.spec().n_features;
        match queries.iter().find(|q| q.n_features() != want) {
            Some(q) => Err(Error::Data(format!(
                "query {} has {} features, the scorer expects {want}",
                q.qid,
                q.n_features()
            ))),
            None => Ok(()),
        }
    }
}
