//! `din-rank params`: trainable parameter counts.
//!
//! Each row carries the closed-form count, the count enumerated from an
//! instantiated (or loaded) parameter store, and the overhead over a
//! univariate scorer with the same dense head.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use toml::Value;

use din_rank::rng::SeedPath;
use din_rank::scorers::{Scorer, ScorerSpec};

use super::{create_dir, jsonl, load_checkpoint, write_file, AnyCheckpoint, Common, Format};
use crate::config::{echo, from_table, layered, path_value, to_table, ParamsConfig};
use crate::error::{require_path, CliError, CliResult};

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint whose stored tensors are counted; repeatable.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamRow {
    pub source: String,
    pub scorer: String,
    pub param_count: usize,
    pub enumerated: usize,
    pub univariate_baseline: usize,
    pub overhead: isize,
}

fn row(source: String, spec: &ScorerSpec, enumerated: usize) -> CliResult<ParamRow> {
    let scorer = Scorer::new(spec.clone())?;
    let mut uni = ScorerSpec::univariate(spec.n_features, spec.dense.clone());
    uni.query_features = spec.query_features;
    let baseline = Scorer::new(uni)?.param_count();
    Ok(ParamRow {
        source,
        scorer: spec.name(),
        param_count: scorer.param_count(),
        enumerated,
        univariate_baseline: baseline,
        overhead: enumerated as isize - baseline as isize,
    })
}

pub fn render_table(rows: &[ParamRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:<34} {:>12} {:>12} {:>12}",
        "source", "scorer", "params", "enumerated", "overhead"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<28} {:<34} {:>12} {:>12} {:>+12}",
            r.source, r.scorer, r.param_count, r.enumerated, r.overhead
        );
    }
    out
}

pub fn run(args: &ParamsArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    if !args.checkpoint.is_empty() {
        flags.push(("checkpoints", Value::Array(args.checkpoint.iter().map(|p| path_value(p)).collect())));
    }
    let cfg: ParamsConfig = from_table(
        layered(args.common.config.as_deref(), flags, &args.common.overrides)?,
        "params",
    )?;
    if cfg.scorers.is_empty() && cfg.checkpoints.is_empty() {
        return Err(CliError::Usage("params needs at least one [[scorers]] entry or --checkpoint".into()));
    }
    let mut rows = Vec::new();
    for (i, spec) in cfg.scorers.iter().enumerate() {
        let store = Scorer::new(spec.clone())?.init_params::<f32>(SeedPath::new(0));
        rows.push(row(format!("scorers[{i}]"), spec, store.num_trainable_scalars())?);
    }
    for p in &cfg.checkpoints {
        require_path("checkpoint", p)?;
        let (spec, n) = match load_checkpoint(p)? {
            AnyCheckpoint::F32(c) => (c.model.scorer.spec().clone(), c.model.params.num_trainable_scalars()),
            AnyCheckpoint::F64(c) => (c.model.scorer.spec().clone(), c.model.params.num_trainable_scalars()),
        };
        rows.push(row(p.display().to_string(), &spec, n)?);
    }

    if let Some(out) = &args.common.out_dir {
        create_dir(out)?;
        echo(&to_table(&cfg), out)?;
        write_file(&out.join("params.jsonl"), &jsonl(&rows))?;
        write_file(&out.join("params.txt"), &render_table(&rows))?;
    }
    match args.format {
        Format::Table => print!("{}", render_table(&rows)),
        Format::Jsonl => print!("{}", jsonl(&rows)),
    }
    Ok(())
}
