use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RankedQuery;
use crate::error::{Error, Result};

const SIDECAR_FORMAT: &str = "din-rank-feature-stats";
const SIDECAR_VERSION: u32 = 1;

/// Per-feature z-score statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format: String,
    version: u32,
    n_features: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl FeatureStats {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn is_constant(&self, feature: usize) -> bool {
        self.std[feature] == 0.0
    }

    pub fn constant_features(&self) -> Vec<usize> {
        (0..self.n_features()).filter(|&j| self.is_constant(j)).collect()
    }

    pub fn to_sidecar_string(&self) -> String {
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: SIDECAR_VERSION,
            n_features: self.n_features(),
            mean: self.mean.clone(),
            std: self.std.clone(),
        };
        toml::to_string(&sidecar).expect("feature stats serialize")
    }

    pub fn from_sidecar_str(text: &str) -> Result<Self> {
        let s: Sidecar = toml::from_str(text).map_err(|e| Error::Data(format!("feature stats: {e}")))?;
        if s.format != SIDECAR_FORMAT || s.version != SIDECAR_VERSION {
            return Err(Error::Data(format!(
                "unsupported feature stats format {} v{}",
                s.format, s.version
            )));
        }
        if s.mean.len() != s.n_features || s.std.len() != s.n_features {
            return Err(Error::Data("feature stats length mismatch".into()));
        }
        Ok(FeatureStats {
            mean: s.mean,
            std: s.std,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_sidecar_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_sidecar_str(&text)
    }
}

/// Fits per-feature mean and population standard deviation over every
/// document of the given (training) queries.
pub fn fit_feature_stats(queries: &[RankedQuery]) -> Result<FeatureStats> {
    let dim = super::feature_dim(queries);
    let n: usize = queries.iter().map(RankedQuery::n_docs).sum();
    if n == 0 || dim == 0 {
        return Err(Error::Data("cannot fit feature statistics on an empty split".into()));
    }
    let mut mean = vec![0.0f64; dim];
    for q in queries {
        for i in 0..q.n_docs() {
            for (m, &v) in mean.iter_mut().zip(q.features.row(i)) {
                *m += f64::from(v);
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; dim];
    for q in queries {
        for i in 0..q.n_docs() {
            for ((s, &v), &m) in var.iter_mut().zip(q.features.row(i)).zip(&mean) {
                let d = f64::from(v) - m;
                *s += d * d;
            }
        }
    }
    let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
    Ok(FeatureStats { mean, std })
}

/// Z-scores every feature; constant features map to 0.
pub fn apply_normalization(
    queries: Vec<RankedQuery>,
    stats: &FeatureStats,
) -> Result<Vec<RankedQuery>> {
    if stats.n_features() == 0 {
        return Err(Error::Data("feature statistics are not fitted".into()));
    }
    queries
        .into_iter()
        .map(|mut q| {
            if q.n_features() != stats.n_features() {
                return Err(Error::Data(format!(
                    "query {} has {} features, statistics cover {}",
                    q.qid,
                    q.n_features(),
                    stats.n_features()
                )));
            }
            for i in 0..q.n_docs() {
                for (j, v) in q.features.row_mut(i).iter_mut().enumerate() {
                    *v = if stats.is_constant(j) {
                        0.0
                    } else {
                        ((f64::from(*v) - stats.mean[j]) / stats.std[j]) as f32
                    };
                }
            }
            Ok(q)
        })
        .collect()
}
