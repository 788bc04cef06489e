use rand::seq::SliceRandom;

use super::RankedQuery;
use crate::numeric::Matrix;
use crate::rng::SeedPath;

/// Fixed-shape stack of queries padded to the longest list in the batch.
///
/// Row `b * list_len + j` holds document `j` of list `b`. Padded slots have
/// zero features, label 0, and a false mask flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ListBatch {
    pub qids: Vec<String>,
    pub list_len: usize,
    pub features: Matrix<f32>,
    pub labels: Vec<u32>,
    pub mask: Vec<bool>,
    /// Optional per-list query context, one row per list.
    pub query_features: Option<Matrix<f32>>,
}

impl ListBatch {
    /// Pads the given queries to a common length. Panics on an empty slice or
    /// an empty query.
    pub fn from_queries(queries: &[&RankedQuery]) -> Self {
        Self::padded_to(queries, 0)
    }

    /// Like [`ListBatch::from_queries`] but pads to at least `min_len` slots.
    pub fn padded_to(queries: &[&RankedQuery], min_len: usize) -> Self {
        assert!(!queries.is_empty(), "a batch needs at least one query");
        let list_len = queries
            .iter()
            .map(|q| q.n_docs())
            .max()
            .unwrap_or(0)
            .max(min_len);
        let n_features = queries[0].n_features();
        let rows = queries.len() * list_len;
        let mut features = Matrix::zeros(rows, n_features);
        let mut labels = vec![0; rows];
        let mut mask = vec![false; rows];
        for (b, q) in queries.iter().enumerate() {
            assert!(q.n_docs() >= 1, "query {} has no documents", q.qid);
            assert_eq!(q.n_features(), n_features, "feature dimension differs in batch");
            let base = b * list_len;
            let c = n_features;
            features.data_mut()[base * c..(base + q.n_docs()) * c]
                .copy_from_slice(q.features.data());
            labels[base..base + q.n_docs()].copy_from_slice(&q.labels);
            mask[base..base + q.n_docs()].iter_mut().for_each(|m| *m = true);
        }
        ListBatch {
            qids: queries.iter().map(|q| q.qid.clone()).collect(),
            list_len,
            features,
            labels,
            mask,
            query_features: None,
        }
    }

    pub fn n_lists(&self) -> usize {
        self.qids.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn rows(&self) -> usize {
        self.mask.len()
    }

    pub fn list_rows(&self, b: usize) -> std::ops::Range<usize> {
        b * self.list_len..(b + 1) * self.list_len
    }

    /// Number of valid documents in list `b`.
    pub fn valid_len(&self, b: usize) -> usize {
        self.mask[self.list_rows(b)].iter().filter(|&&m| m).count()
    }
}

/// Iterator over list batches in (optionally shuffled) query order.
pub struct BatchIter<'a> {
    queries: &'a [RankedQuery],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = ListBatch;

    fn next(&mut self) -> Option<ListBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let members: Vec<&RankedQuery> = self.order[self.pos..end]
            .iter()
            .map(|&i| &self.queries[i])
            .collect();
        self.pos = end;
        Some(ListBatch::from_queries(&members))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

/// Splits queries into batches of `batch_size`. Shuffling permutes query order
/// only, deterministically from `seed`; document order is never changed.
pub fn make_batches(
    queries: &[RankedQuery],
    batch_size: usize,
    seed: SeedPath,
    shuffle: bool,
) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..queries.len()).collect();
    if shuffle {
        order.shuffle(&mut seed.rng());
    }
    BatchIter {
        queries,
        order,
        batch_size,
        pos: 0,
    }
}
