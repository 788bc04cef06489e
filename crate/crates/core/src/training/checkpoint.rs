//! Single-file checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "DINRANK\0"
//! version    u32
//! meta_len   u64, followed by a UTF-8 JSON metadata object
//! n_tensors  u32, followed by n_tensors records:
//!   name_len u32, name (UTF-8)
//!   dtype    u8   (1 = f32, 2 = f64)
//!   kind     u8   (0 = trainable, 1 = buffer, 2 = optimizer state)
//!   rows     u64, cols u64
//!   payload  rows·cols values, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adagrad, Model};
use crate::data::FeatureStats;
use crate::error::{Error, Result};
use crate::numeric::{DType, Matrix, ParamStore, Real};
use crate::scorers::{Scorer, ScorerSpec};

const MAGIC: &[u8; 8] = b"DINRANK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;
const KIND_OPTIMIZER: u8 = 2;

/// Self-describing part of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub dtype: DType,
    pub scorer: ScorerSpec,
    pub feature_stats: Option<FeatureStats>,
    pub step: u64,
    /// Root seed of the run; with `step` it fixes every later random draw.
    pub seed: u64,
    pub learning_rate: Option<f64>,
    pub adagrad_epsilon: Option<f64>,
    /// Free-form provenance such as the effective training config.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub optimizer: Option<Adagrad<T>>,
    pub seed: u64,
    pub extra: serde_json::Value,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(model: Model<T>, optimizer: Option<Adagrad<T>>, seed: u64) -> Self {
        Checkpoint {
            model,
            optimizer,
            seed,
            extra: serde_json::Value::Null,
        }
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            dtype: T::DTYPE,
            scorer: self.model.scorer.spec().clone(),
            feature_stats: self.model.feature_stats.clone(),
            step: self.model.step,
            seed: self.seed,
            learning_rate: self.optimizer.as_ref().map(|o| o.learning_rate),
            adagrad_epsilon: self.optimizer.as_ref().map(|o| o.epsilon),
            extra: self.extra.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta()).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);

        let mut tensors: Vec<(&str, &Matrix<T>, u8)> = self
            .model
            .params
            .iter()
            .map(|(n, m, trainable)| (n, m, if trainable { KIND_PARAM } else { KIND_BUFFER }))
            .collect();
        if let Some(opt) = &self.optimizer {
            tensors.extend(opt.accumulators().map(|(n, m)| (n, m, KIND_OPTIMIZER)));
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, m, kind) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            out.push(kind);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for &v in m.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let meta = read_header(&mut r)?;
        if meta.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint stores {:?} tensors, {:?} requested",
                meta.dtype,
                T::DTYPE
            )));
        }
        let scorer = Scorer::new(meta.scorer.clone())?;
        let mut params = ParamStore::new();
        let mut optimizer = match (meta.learning_rate, meta.adagrad_epsilon) {
            (Some(lr), Some(eps)) => Some(Adagrad::new(lr, eps)?),
            _ => None,
        };
        let n = r.u32()?;
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = DType::from_tag(r.u8()?);
            if dtype != Some(T::DTYPE) {
                return Err(Error::Checkpoint(format!("tensor `{name}` has a different dtype")));
            }
            let kind = r.u8()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let size = T::DTYPE.size();
            let count = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            let payload = r.take(count.saturating_mul(size))?;
            let data = payload.chunks_exact(size).map(T::read_le).collect();
            let value = Matrix::from_vec(rows, cols, data)?;
            match kind {
                KIND_PARAM => params.insert(name, value),
                KIND_BUFFER => params.insert_buffer(name, value),
                KIND_OPTIMIZER => match optimizer.as_mut() {
                    Some(opt) => opt.set_accumulator(name, value),
                    None => return Err(Error::Checkpoint("optimizer state without optimizer settings".into())),
                },
                other => return Err(Error::Checkpoint(format!("unknown tensor kind {other}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        check_params(&scorer, &params)?;
        Ok(Checkpoint {
            model: Model {
                scorer,
                params,
                feature_stats: meta.feature_stats,
                step: meta.step,
            },
            optimizer,
            seed: meta.seed,
            extra: meta.extra,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Reads only the header of a checkpoint file.
pub fn read_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut Reader { bytes: &bytes, pos: 0 })
}

/// The loaded tensors must be exactly those a fresh model of this topology
/// would have, with the same shapes.
fn check_params<T: Real>(scorer: &Scorer, params: &ParamStore<T>) -> Result<()> {
    let fresh: ParamStore<T> = scorer.init_params(crate::rng::SeedPath::new(0));
    for (name, value, trainable) in fresh.iter() {
        let loaded = params
            .value(name)
            .map_err(|_| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if loaded.shape() != value.shape() || params.is_trainable(name) != trainable {
            return Err(Error::Checkpoint(format!("tensor `{name}` does not match the scorer")));
        }
    }
    if params.len() != fresh.len() {
        return Err(Error::Checkpoint("checkpoint has tensors the scorer does not use".into()));
    }
    Ok(())
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointMeta> {
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = r.u64()? as usize;
    let meta = r.take(len)?;
    serde_json::from_slice(meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
