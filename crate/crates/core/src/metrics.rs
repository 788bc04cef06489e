//! Ranking metrics and their bootstrap summaries.
//!
//! Documents are ranked by descending score; equal scores keep their
//! original order, so every metric is a deterministic function of
//! `(labels, scores)`. A document is relevant for MRR and ARP when its label
//! is positive.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SeedPath;

/// Cutoffs reported for NDCG.
pub const NDCG_CUTOFFS: [usize; 3] = [1, 5, 10];

/// Positions sorted by descending score, ties by ascending index.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

fn gain(y: u32) -> f64 {
    2f64.powi(y as i32) - 1.0
}

fn dcg(labels_in_order: impl Iterator<Item = u32>, k: usize) -> f64 {
    labels_in_order
        .take(k)
        .enumerate()
        .map(|(r, y)| gain(y) / (r as f64 + 2.0).log2())
        .sum()
}

/// NDCG@k, or `None` for a list without relevant documents.
pub fn ndcg_at_k(labels: &[u32], scores: &[f64], k: usize) -> Option<f64> {
    assert!(k >= 1, "NDCG cutoff must be at least 1");
    let mut ideal = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(ideal.into_iter(), k);
    if best == 0.0 {
        return None;
    }
    let order = ranking_order(scores);
    Some(dcg(order.iter().map(|&i| labels[i]), k) / best)
}

/// Reciprocal 1-based rank of the first relevant document.
pub fn reciprocal_rank(labels: &[u32], scores: &[f64]) -> Option<f64> {
    ranking_order(scores)
        .iter()
        .position(|&i| labels[i] > 0)
        .map(|p| 1.0 / (p as f64 + 1.0))
}

/// Mean 1-based position of the relevant documents.
pub fn average_relevance_position(labels: &[u32], scores: &[f64]) -> Option<f64> {
    let positions: Vec<f64> = ranking_order(scores)
        .iter()
        .enumerate()
        .filter(|(_, &i)| labels[i] > 0)
        .map(|(p, _)| p as f64 + 1.0)
        .collect();
    if positions.is_empty() {
        None
    } else {
        Some(positions.iter().sum::<f64>() / positions.len() as f64)
    }
}

/// Metrics of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub qid: String,
    pub ndcg: [Option<f64>; 3],
    pub mrr: Option<f64>,
    pub arp: Option<f64>,
}

impl QueryMetrics {
    pub fn compute(qid: &str, labels: &[u32], scores: &[f64]) -> Self {
        QueryMetrics {
            qid: qid.to_string(),
            ndcg: NDCG_CUTOFFS.map(|k| ndcg_at_k(labels, scores, k)),
            mrr: reciprocal_rank(labels, scores),
            arp: average_relevance_position(labels, scores),
        }
    }
}

/// Which metric a summary describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ndcg,
    Mrr,
    Arp,
}

/// Mean of one metric over queries with a percentile bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: MetricKind,
    pub k: Option<usize>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_queries: usize,
}

impl MetricSummary {
    pub fn label(&self) -> String {
        match (self.metric, self.k) {
            (MetricKind::Ndcg, Some(k)) => format!("NDCG@{k}"),
            (MetricKind::Ndcg, None) => "NDCG".into(),
            (MetricKind::Mrr, _) => "MRR".into(),
            (MetricKind::Arp, _) => "ARP".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSpec {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            resamples: 1000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

/// Percentile bootstrap interval of the mean of `values`.
pub fn bootstrap_ci(values: &[f64], spec: &BootstrapSpec, seed: SeedPath) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = seed.rng();
    let n = values.len();
    let mut means: Vec<f64> = (0..spec.resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - spec.confidence) / 2.0;
    (quantile(&means, tail), quantile(&means, 1.0 - tail))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-query metrics plus bootstrap summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_query: Vec<QueryMetrics>,
    pub summaries: Vec<MetricSummary>,
}

impl MetricReport {
    pub fn from_queries(per_query: Vec<QueryMetrics>, bootstrap: &BootstrapSpec) -> Self {
        let root = SeedPath::new(bootstrap.seed).child("bootstrap");
        let mut summaries = Vec::new();
        let mut push = |metric: MetricKind, k: Option<usize>, values: Vec<f64>| {
            let name = format!("{metric:?}{}", k.unwrap_or(0));
            let (ci_low, ci_high) = bootstrap_ci(&values, bootstrap, root.child(&name));
            let mean = if values.is_empty() {
                f64::NAN
            } else {
                values.iter().sum::<f64>() / values.len() as f64
            };
            summaries.push(MetricSummary {
                metric,
                k,
                mean,
                ci_low,
                ci_high,
                n_queries: values.len(),
            });
        };
        for (slot, &k) in NDCG_CUTOFFS.iter().enumerate() {
            push(MetricKind::Ndcg, Some(k), per_query.iter().filter_map(|q| q.ndcg[slot]).collect());
        }
        push(MetricKind::Mrr, None, per_query.iter().filter_map(|q| q.mrr).collect());
        push(MetricKind::Arp, None, per_query.iter().filter_map(|q| q.arp).collect());
        MetricReport { per_query, summaries }
    }

    pub fn summary(&self, metric: MetricKind, k: Option<usize>) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.metric == metric && s.k == k)
    }

    pub fn mean(&self, metric: MetricKind, k: Option<usize>) -> f64 {
        self.summary(metric, k).map_or(f64::NAN, |s| s.mean)
    }

    /// Fixed-width table; NDCG and MRR are shown ×100.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>9} {:>19} {:>8}", "metric", "mean", "95% CI", "queries");
        for s in &self.summaries {
            let scale = if s.metric == MetricKind::Arp { 1.0 } else { 100.0 };
            let _ = writeln!(
                out,
                "{:<8} {:>9.2} {:>19} {:>8}",
                s.label(),
                s.mean * scale,
                format!("[{:.2}, {:.2}]", s.ci_low * scale, s.ci_high * scale),
                s.n_queries
            );
        }
        out
    }

    /// One JSON record per summary.
    pub fn to_jsonl(&self) -> String {
        self.summaries
            .iter()
            .map(|s| serde_json::to_string(s).expect("summaries serialize") + "\n")
            .collect()
    }
}
