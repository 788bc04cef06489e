//! `din-rank benchmark`: per-query inference latency across list sizes.
//!
//! Scorers come from `[[scorers]]` config entries (fresh weights) and from
//! checkpoints. Unless disabled, an exact GSF(m=2) scorer with the first
//! scorer's dense head is added, and every other scorer's median is
//! reported as a ratio against it. Exact GSF lists over the group budget
//! are refused with a record instead of being timed.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use toml::Value;

use din_rank::benchmark::{benchmark_scorer, BenchmarkSpec, LatencyReport};
use din_rank::numeric::{DType, ParamStore, Real};
use din_rank::rng::SeedPath;
use din_rank::scorers::{GsfInference, Scorer, ScorerFamily, ScorerSpec};

use super::{create_dir, jsonl, load_checkpoint, write_file, AnyCheckpoint, Common, Format};
use crate::config::{echo, from_table, layered, path_value, to_table, BenchmarkConfig};
use crate::error::{require_path, CliError, CliResult};

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained checkpoint to time; repeatable.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Comma-separated list sizes.
    #[arg(long, value_delimiter = ',')]
    pub list_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Seed of fresh weights and synthetic inputs.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Row {
    Latency {
        source: String,
        #[serde(flatten)]
        report: LatencyReport,
    },
    Refused {
        source: String,
        scorer: String,
        list_size: usize,
        groups: u64,
        budget: u64,
        reason: String,
    },
    /// Baseline median over scorer median.
    Ratio {
        list_size: usize,
        baseline: String,
        scorer: String,
        ratio: f64,
    },
}

fn is_exact_pair(spec: &ScorerSpec) -> bool {
    matches!(
        spec.family,
        ScorerFamily::Gsf {
            group_size: 2,
            inference: GsfInference::Exact,
            ..
        }
    )
}

fn time_sizes<T: Real>(
    source: &str,
    scorer: &Scorer,
    params: &ParamStore<T>,
    sizes: &[usize],
    spec: &BenchmarkSpec,
) -> CliResult<Vec<Row>> {
    let mut rows = Vec::new();
    for &n in sizes {
        match benchmark_scorer(scorer, params, n, spec) {
            Ok(report) => rows.push(Row::Latency {
                source: source.to_string(),
                report,
            }),
            Err(din_rank::Error::GroupBudget { groups, n_docs, budget }) => rows.push(Row::Refused {
                source: source.to_string(),
                scorer: scorer.spec().name(),
                list_size: n_docs,
                groups: u64::try_from(groups).unwrap_or(u64::MAX),
                budget,
                reason: format!(
                    "exact inference would evaluate {groups} groups per list, above the budget of {budget}; \
                     raise max_groups or use subsample inference"
                ),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rows)
}

fn time_fresh<T: Real>(source: &str, spec: &ScorerSpec, cfg: &BenchmarkConfig, b: &BenchmarkSpec) -> CliResult<Vec<Row>> {
    let scorer = Scorer::new(spec.clone())?;
    let params = scorer.init_params::<T>(SeedPath::new(cfg.seed).child("benchmark-init"));
    time_sizes(source, &scorer, &params, &cfg.list_sizes, b)
}

/// Ratio rows of every scorer against the exact GSF(m=2) entry.
pub fn ratios(rows: &[Row], baseline_source: &str) -> Vec<Row> {
    fn latency(r: &Row) -> Option<(&str, &LatencyReport)> {
        match r {
            Row::Latency { source, report } => Some((source.as_str(), report)),
            _ => None,
        }
    }
    let mut out = Vec::new();
    for (src, base) in rows.iter().filter_map(latency).filter(|(s, _)| *s == baseline_source) {
        for (_, other) in rows
            .iter()
            .filter_map(latency)
            .filter(|(s, r)| *s != src && r.list_size == base.list_size)
        {
            out.push(Row::Ratio {
                list_size: base.list_size,
                baseline: base.scorer.clone(),
                scorer: other.scorer.clone(),
                ratio: base.median_ms / other.median_ms,
            });
        }
    }
    out
}

pub fn render_table(rows: &[Row]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:<34} {:>6} {:>11} {:>11} {:>10}",
        "source", "scorer", "n", "median_ms", "p95_ms", "params"
    );
    for r in rows {
        let _ = match r {
            Row::Latency { source, report } => writeln!(
                out,
                "{:<28} {:<34} {:>6} {:>11.4} {:>11.4} {:>10}",
                source, report.scorer, report.list_size, report.median_ms, report.p95_ms, report.param_count
            ),
            Row::Refused {
                source,
                scorer,
                list_size,
                reason,
                ..
            } => writeln!(out, "{source:<28} {scorer:<34} {list_size:>6} refused: {reason}"),
            Row::Ratio {
                list_size,
                baseline,
                scorer,
                ratio,
            } => writeln!(out, "ratio n={list_size}: {baseline} / {scorer} = {ratio:.2}x"),
        };
    }
    out
}

pub fn run(args: &BenchmarkArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    if !args.checkpoint.is_empty() {
        flags.push(("checkpoints", Value::Array(args.checkpoint.iter().map(|p| path_value(p)).collect())));
    }
    if let Some(s) = &args.list_sizes {
        flags.push(("list_sizes", Value::Array(s.iter().map(|&n| Value::Integer(n as i64)).collect())));
    }
    for (key, v) in [("warmup", args.warmup), ("repetitions", args.repetitions)] {
        if let Some(v) = v {
            flags.push((key, Value::Integer(v as i64)));
        }
    }
    if let Some(s) = args.seed {
        flags.push(("seed", Value::Integer(s as i64)));
    }
    let mut cfg: BenchmarkConfig = from_table(
        layered(args.common.config.as_deref(), flags, &args.common.overrides)?,
        "benchmark",
    )?;
    let bench = BenchmarkSpec {
        warmup: cfg.warmup,
        repetitions: cfg.repetitions,
        seed: cfg.seed,
    };
    bench.validate()?;
    if cfg.list_sizes.is_empty() || cfg.list_sizes.contains(&0) {
        return Err(CliError::Usage("list_sizes must be non-empty and positive".into()));
    }
    for p in &cfg.checkpoints {
        require_path("checkpoint", p)?;
    }
    let checkpoints = cfg
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p).map(|c| (p.display().to_string(), c)))
        .collect::<CliResult<Vec<_>>>()?;

    let first = cfg.scorers.first().cloned().or_else(|| {
        checkpoints.first().map(|(_, c)| match c {
            AnyCheckpoint::F32(c) => c.model.scorer.spec().clone(),
            AnyCheckpoint::F64(c) => c.model.scorer.spec().clone(),
        })
    });
    let Some(first) = first else {
        return Err(CliError::Usage("benchmark needs at least one [[scorers]] entry or --checkpoint".into()));
    };
    let has_baseline = cfg.scorers.iter().any(is_exact_pair)
        || checkpoints.iter().any(|(_, c)| match c {
            AnyCheckpoint::F32(c) => is_exact_pair(c.model.scorer.spec()),
            AnyCheckpoint::F64(c) => is_exact_pair(c.model.scorer.spec()),
        });
    if cfg.gsf_baseline && !has_baseline {
        let mut gsf = ScorerSpec::gsf(first.n_features, 2, first.dense.clone());
        gsf.query_features = first.query_features;
        cfg.scorers.push(gsf);
    }

    let mut rows = Vec::new();
    let mut baseline = None;
    for (i, spec) in cfg.scorers.iter().enumerate() {
        let source = format!("scorers[{i}]");
        if baseline.is_none() && is_exact_pair(spec) {
            baseline = Some(source.clone());
        }
        rows.extend(match cfg.precision {
            DType::F32 => time_fresh::<f32>(&source, spec, &cfg, &bench)?,
            DType::F64 => time_fresh::<f64>(&source, spec, &cfg, &bench)?,
        });
    }
    for (source, ckpt) in &checkpoints {
        let (spec, timed) = match ckpt {
            AnyCheckpoint::F32(c) => (
                c.model.scorer.spec(),
                time_sizes(source, &c.model.scorer, &c.model.params, &cfg.list_sizes, &bench)?,
            ),
            AnyCheckpoint::F64(c) => (
                c.model.scorer.spec(),
                time_sizes(source, &c.model.scorer, &c.model.params, &cfg.list_sizes, &bench)?,
            ),
        };
        if baseline.is_none() && is_exact_pair(spec) {
            baseline = Some(source.clone());
        }
        rows.extend(timed);
    }
    if let Some(b) = &baseline {
        let r = ratios(&rows, b);
        rows.extend(r);
    }

    if let Some(out) = &args.common.out_dir {
        create_dir(out)?;
        echo(&to_table(&cfg), out)?;
        write_file(&out.join("benchmark.jsonl"), &jsonl(&rows))?;
        write_file(&out.join("benchmark.txt"), &render_table(&rows))?;
    }
    match args.format {
        Format::Table => print!("{}", render_table(&rows)),
        Format::Jsonl => print!("{}", jsonl(&rows)),
    }
    Ok(())
}
