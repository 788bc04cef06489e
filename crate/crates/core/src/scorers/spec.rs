use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{AttentionBlockSpec, DenseBlockSpec};

/// How GSF pools sub-network outputs at scoring time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", from = "InferenceRepr")]
pub enum GsfInference {
    /// Average over every ordered group containing the document.
    Exact,
    /// Rolling window of the group size over a shuffled list. Cheap, but the
    /// result depends on the shuffle and is not permutation-equivariant.
    Subsample {
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
enum InferenceRepr {
    Exact {},
    Subsample {
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl From<InferenceRepr> for GsfInference {
    fn from(r: InferenceRepr) -> Self {
        match r {
            InferenceRepr::Exact {} => GsfInference::Exact,
            InferenceRepr::Subsample { stride, seed } => GsfInference::Subsample { stride, seed },
        }
    }
}

fn one() -> usize {
    1
}

fn default_budget() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "FamilyRepr")]
pub enum ScorerFamily {
    Univariate,
    Gsf {
        group_size: usize,
        #[serde(default = "exact")]
        inference: GsfInference,
        /// Largest number of groups exact inference may enumerate per list.
        #[serde(default = "default_budget")]
        max_groups: u64,
    },
    AttnDin {
        attention: AttentionBlockSpec,
    },
}

/// Deserialization mirror of [`ScorerFamily`] that rejects stray keys next
/// to `kind = "univariate"`.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum FamilyRepr {
    Univariate {},
    Gsf {
        group_size: usize,
        #[serde(default = "exact")]
        inference: GsfInference,
        #[serde(default = "default_budget")]
        max_groups: u64,
    },
    AttnDin {
        attention: AttentionBlockSpec,
    },
}

impl From<FamilyRepr> for ScorerFamily {
    fn from(r: FamilyRepr) -> Self {
        match r {
            FamilyRepr::Univariate {} => ScorerFamily::Univariate,
            FamilyRepr::Gsf {
                group_size,
                inference,
                max_groups,
            } => ScorerFamily::Gsf {
                group_size,
                inference,
                max_groups,
            },
            FamilyRepr::AttnDin { attention } => ScorerFamily::AttnDin { attention },
        }
    }
}

fn exact() -> GsfInference {
    GsfInference::Exact
}

/// Complete topology of a scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    pub family: ScorerFamily,
    pub n_features: usize,
    /// Width of the optional per-query context vector (0 when absent).
    #[serde(default)]
    pub query_features: usize,
    pub dense: DenseBlockSpec,
}

impl ScorerSpec {
    pub fn univariate(n_features: usize, dense: DenseBlockSpec) -> Self {
        ScorerSpec {
            family: ScorerFamily::Univariate,
            n_features,
            query_features: 0,
            dense,
        }
    }

    pub fn gsf(n_features: usize, group_size: usize, dense: DenseBlockSpec) -> Self {
        ScorerSpec {
            family: ScorerFamily::Gsf {
                group_size,
                inference: GsfInference::Exact,
                max_groups: default_budget(),
            },
            n_features,
            query_features: 0,
            dense,
        }
    }

    pub fn attn_din(n_features: usize, attention: AttentionBlockSpec, dense: DenseBlockSpec) -> Self {
        ScorerSpec {
            family: ScorerFamily::AttnDin { attention },
            n_features,
            query_features: 0,
            dense,
        }
    }

    pub fn name(&self) -> String {
        match &self.family {
            ScorerFamily::Univariate => "univariate".into(),
            ScorerFamily::Gsf {
                group_size,
                inference,
                ..
            } => match inference {
                GsfInference::Exact => format!("gsf(m={group_size},exact)"),
                GsfInference::Subsample { .. } => format!("gsf(m={group_size},subsample)"),
            },
            ScorerFamily::AttnDin { attention } => format!(
                "attn-din(k={},heads={},layers={})",
                attention.width, attention.heads, attention.layers
            ),
        }
    }

    /// Per-document input width (document plus query features).
    pub fn input_width(&self) -> usize {
        self.n_features + self.query_features
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 {
            return Err(Error::Config("n_features must be at least 1".into()));
        }
        self.dense.validate()?;
        match &self.family {
            ScorerFamily::Univariate => Ok(()),
            ScorerFamily::Gsf {
                group_size,
                inference,
                ..
            } => {
                if *group_size == 0 {
                    return Err(Error::Config("GSF group size must be at least 1".into()));
                }
                if let GsfInference::Subsample { stride, .. } = inference {
                    if *stride == 0 || stride > group_size {
                        return Err(Error::Config(format!(
                            "GSF window stride {stride} must be in 1..={group_size}"
                        )));
                    }
                }
                Ok(())
            }
            ScorerFamily::AttnDin { attention } => attention.validate(),
        }
    }

    /// Exact number of trainable scalars, by closed form.
    pub fn param_count(&self) -> usize {
        let f = self.input_width();
        match &self.family {
            ScorerFamily::Univariate => self.dense.param_count(f, 1),
            ScorerFamily::Gsf { group_size, .. } => {
                self.dense.param_count(group_size * f, *group_size)
            }
            ScorerFamily::AttnDin { attention } => {
                attention.param_count(f) + self.dense.param_count(f + attention.width, 1)
            }
        }
    }
}
