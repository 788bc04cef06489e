//! Ranking datasets: parsing, query filtering and truncation, feature
//! normalization, and padded list batches.

mod batch;
mod libsvm;
mod normalize;

pub use batch::{make_batches, BatchIter, ListBatch};
pub use libsvm::{parse_ranking_file, parse_ranking_reader, write_ranking, write_ranking_file};
pub use normalize::{apply_normalization, fit_feature_stats, FeatureStats};

use crate::numeric::Matrix;

/// One query's candidate documents: a feature row and a relevance grade each.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub qid: String,
    pub labels: Vec<u32>,
    pub features: Matrix<f32>,
}

impl RankedQuery {
    pub fn new(qid: impl Into<String>, labels: Vec<u32>, features: Matrix<f32>) -> Self {
        assert_eq!(labels.len(), features.rows(), "one label per document row");
        RankedQuery {
            qid: qid.into(),
            labels,
            features,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn has_relevant(&self) -> bool {
        self.labels.iter().any(|&y| y > 0)
    }

    /// Pads or truncates the feature columns to `n` (missing features are 0).
    pub fn with_feature_dim(mut self, n: usize) -> Self {
        if self.features.cols() != n {
            let mut m = Matrix::zeros(self.features.rows(), n);
            let keep = n.min(self.features.cols());
            for i in 0..m.rows() {
                m.row_mut(i)[..keep].copy_from_slice(&self.features.row(i)[..keep]);
            }
            self.features = m;
        }
        self
    }
}

/// Largest feature dimension across queries.
pub fn feature_dim(queries: &[RankedQuery]) -> usize {
    queries.iter().map(RankedQuery::n_features).max().unwrap_or(0)
}

/// Brings every query to a common feature dimension.
pub fn align_feature_dim(queries: Vec<RankedQuery>, n: usize) -> Vec<RankedQuery> {
    queries.into_iter().map(|q| q.with_feature_dim(n)).collect()
}

/// Drops queries whose labels are all zero.
pub fn filter_no_relevant(queries: Vec<RankedQuery>) -> Vec<RankedQuery> {
    queries.into_iter().filter(RankedQuery::has_relevant).collect()
}

/// Keeps the first `max_docs` documents of each query, in file order.
pub fn truncate_lists(queries: Vec<RankedQuery>, max_docs: usize) -> Vec<RankedQuery> {
    assert!(max_docs >= 1, "max_docs must be at least 1");
    queries
        .into_iter()
        .map(|mut q| {
            if q.n_docs() > max_docs {
                let cols = q.features.cols();
                let data = q.features.data()[..max_docs * cols].to_vec();
                q.features = Matrix::from_vec(max_docs, cols, data).expect("prefix shape");
                q.labels.truncate(max_docs);
            }
            q
        })
        .collect()
}
