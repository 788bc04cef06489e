//! Subcommand implementations and the helpers they share.

pub mod benchmark;
pub mod evaluate;
pub mod params;
pub mod predict;
pub mod train;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use din_rank::data::{parse_ranking_file, RankedQuery};
use din_rank::numeric::DType;
use din_rank::training::{read_meta, Checkpoint};

use crate::error::{require_path, CliError, CliResult};

/// Flags every subcommand accepts.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted `key=value` applied after the config file and flags; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory receiving the effective config and all outputs.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    /// Aligned human-readable table.
    #[default]
    Table,
    /// One JSON record per line.
    Jsonl,
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn jsonl<R: Serialize>(records: &[R]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn create_writer(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn flush(mut w: impl Write, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn load_queries(what: &'static str, path: &Path) -> CliResult<Vec<RankedQuery>> {
    require_path(what, path)?;
    Ok(parse_ranking_file(path)?)
}

/// A checkpoint in whichever precision it was saved.
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

pub fn load_checkpoint(path: &Path) -> CliResult<AnyCheckpoint> {
    require_path("checkpoint", path)?;
    Ok(match read_meta(path)?.dtype {
        DType::F32 => AnyCheckpoint::F32(Checkpoint::load(path)?),
        DType::F64 => AnyCheckpoint::F64(Checkpoint::load(path)?),
    })
}

/// Binds the model of an [`AnyCheckpoint`] to `$m` with its concrete
/// precision and evaluates `$body`.
macro_rules! with_model {
    ($ckpt:expr, $m:ident => $body:expr) => {
        match $ckpt {
            $crate::commands::AnyCheckpoint::F32(c) => {
                let $m = c.model;
                $body
            }
            $crate::commands::AnyCheckpoint::F64(c) => {
                let $m = c.model;
                $body
            }
        }
    };
}
pub(crate) use with_model;
