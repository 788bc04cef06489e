//! Layered command configuration.
//!
//! Every command reads a TOML table built in three layers: the `--config`
//! file, then the command's own flags, then each `--override key=value` in
//! order. The merged table is deserialized into the command's config type,
//! whose unknown keys are rejected, and the re-serialized result is what
//! gets echoed into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use din_rank::benchmark::MIN_WARMUP;
use din_rank::metrics::BootstrapSpec;
use din_rank::numeric::DType;
use din_rank::scorers::ScorerSpec;
use din_rank::training::TrainConfig;

use crate::error::{require_path, CliError, CliResult};

/// File name of the echoed configuration inside an output directory.
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

pub fn load_table(path: Option<&Path>) -> CliResult<Table> {
    let Some(path) = path else {
        return Ok(Table::new());
    };
    require_path("config file", path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<Table>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Parses `raw` as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets a dotted key, creating intermediate tables.
pub fn set_path(table: &mut Table, key: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("invalid override key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for (i, part) in parents.iter().enumerate() {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            CliError::Usage(format!("override `{key}`: `{}` is not a table", parts[..=i].join(".")))
        })?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

pub fn apply_override(table: &mut Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{spec}` is not of the form key=value")))?;
    set_path(table, key.trim(), parse_value(raw.trim()))
}

/// Builds the merged table: file, then flags, then overrides.
pub fn layered(config: Option<&Path>, flags: Vec<(&str, Value)>, overrides: &[String]) -> CliResult<Table> {
    let mut table = load_table(config)?;
    for (key, value) in flags {
        set_path(&mut table, key, value)?;
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Ok(table)
}

pub fn from_table<T: DeserializeOwned>(table: Table, what: &str) -> CliResult<T> {
    T::deserialize(Value::Table(table)).map_err(|e| CliError::Usage(format!("invalid {what} configuration: {e}")))
}

pub fn to_table<T: Serialize>(config: &T) -> Table {
    match Value::try_from(config).expect("configs serialize to TOML") {
        Value::Table(t) => t,
        _ => unreachable!("configs are structs"),
    }
}

/// Writes the effective configuration into `dir`.
pub fn echo(table: &Table, dir: &Path) -> CliResult<PathBuf> {
    let path = dir.join(EFFECTIVE_CONFIG);
    let text = toml::to_string_pretty(table).expect("tables serialize");
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn yes() -> bool {
    true
}

/// Dataset files of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub valid: Option<PathBuf>,
    /// Final report split; falls back to `valid`, then `train`.
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Standardize features with statistics fit on the training split.
    #[serde(default = "yes")]
    pub normalize: bool,
}

/// `train` configuration: a `[data]` section plus the training options at
/// top level.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_table(mut table: Table) -> CliResult<Self> {
        let data = table
            .remove("data")
            .ok_or_else(|| CliError::Usage("train configuration needs a [data] section with `train`".into()))?;
        let data = DataConfig::deserialize(data).map_err(|e| CliError::Usage(format!("invalid [data] section: {e}")))?;
        let train = from_table(table, "train")?;
        Ok(RunConfig { data, train })
    }

    pub fn to_table(&self) -> Table {
        let mut t = to_table(&self.train);
        t.insert("data".into(), Value::Table(to_table(&self.data)));
        t
    }
}

fn default_metrics() -> Vec<String> {
    ["ndcg@1", "ndcg@5", "ndcg@10", "mrr", "arp"].map(String::from).to_vec()
}
fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default)]
    pub bootstrap: BootstrapSpec,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_sizes() -> Vec<usize> {
    vec![10, 50, 100, 200]
}
fn default_warmup() -> usize {
    MIN_WARMUP
}
fn default_reps() -> usize {
    50
}
fn default_precision() -> DType {
    DType::F32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Scorers benchmarked with freshly initialized weights.
    #[serde(default)]
    pub scorers: Vec<ScorerSpec>,
    /// Trained checkpoints benchmarked with their stored weights.
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    #[serde(default = "default_sizes")]
    pub list_sizes: Vec<usize>,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    /// Precision of freshly initialized scorers.
    #[serde(default = "default_precision")]
    pub precision: DType,
    /// Add an exact GSF(m=2) scorer sharing the first scorer's dense head
    /// when none is listed.
    #[serde(default = "yes")]
    pub gsf_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default)]
    pub scorers: Vec<ScorerSpec>,
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
}
