//! `din-rank evaluate`: metric report of a checkpoint on a dataset.

use std::path::PathBuf;

use clap::Args;
use toml::Value;

use din_rank::metrics::{MetricKind, MetricReport, NDCG_CUTOFFS};
use din_rank::training::evaluate;

use super::{create_dir, jsonl, load_checkpoint, load_queries, with_model, write_file, Common, Format};
use crate::config::{echo, from_table, layered, path_value, to_table, EvaluateConfig};
use crate::error::{require_path, CliError, CliResult};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// LibSVM ranking file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated subset of ndcg@1, ndcg@5, ndcg@10, mrr, arp.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Bootstrap seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

/// Parses `ndcg@k`, `mrr` or `arp`.
pub fn parse_metric(name: &str) -> CliResult<(MetricKind, Option<usize>)> {
    let lower = name.trim().to_ascii_lowercase();
    match lower.as_str() {
        "mrr" => return Ok((MetricKind::Mrr, None)),
        "arp" => return Ok((MetricKind::Arp, None)),
        _ => {}
    }
    lower
        .strip_prefix("ndcg@")
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|k| NDCG_CUTOFFS.contains(k))
        .map(|k| (MetricKind::Ndcg, Some(k)))
        .ok_or_else(|| {
            CliError::Usage(format!(
                "unknown metric `{name}` (expected ndcg@1, ndcg@5, ndcg@10, mrr or arp)"
            ))
        })
}

pub fn run(args: &EvaluateArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    if let Some(p) = &args.checkpoint {
        flags.push(("checkpoint", path_value(p)));
    }
    if let Some(p) = &args.data {
        flags.push(("data", path_value(p)));
    }
    if let Some(m) = &args.metrics {
        flags.push(("metrics", Value::Array(m.iter().cloned().map(Value::String).collect())));
    }
    if let Some(s) = args.seed {
        flags.push(("bootstrap.seed", Value::Integer(s as i64)));
    }
    let cfg: EvaluateConfig = from_table(
        layered(args.common.config.as_deref(), flags, &args.common.overrides)?,
        "evaluate",
    )?;
    let wanted = cfg.metrics.iter().map(|m| parse_metric(m)).collect::<CliResult<Vec<_>>>()?;
    require_path("checkpoint", &cfg.checkpoint)?;
    require_path("evaluation data", &cfg.data)?;

    let checkpoint = load_checkpoint(&cfg.checkpoint)?;
    let queries = load_queries("evaluation data", &cfg.data)?;
    let report = with_model!(checkpoint, model => {
        let prepared = model.prepare(queries)?;
        evaluate(&model, &prepared, cfg.batch_size, &cfg.bootstrap)?
    });
    let report = MetricReport {
        summaries: wanted
            .iter()
            .filter_map(|&(m, k)| report.summary(m, k).cloned())
            .collect(),
        per_query: report.per_query,
    };

    if let Some(out) = &args.common.out_dir {
        create_dir(out)?;
        echo(&to_table(&cfg), out)?;
        write_file(&out.join("report.txt"), &report.to_table())?;
        write_file(&out.join("report.jsonl"), &report.to_jsonl())?;
        write_file(&out.join("per_query.jsonl"), &jsonl(&report.per_query))?;
    }
    match args.format {
        Format::Table => print!("{}", report.to_table()),
        Format::Jsonl => print!("{}", report.to_jsonl()),
    }
    Ok(())
}
