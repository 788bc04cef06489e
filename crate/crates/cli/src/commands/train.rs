//! `din-rank train`: fit a scorer and write a self-contained run directory.
//!
//! ```text
//! <out-dir>/effective_config.toml
//! <out-dir>/run_log.jsonl          one step or eval record per line
//! <out-dir>/checkpoints/best.ckpt  best validation selection metric
//! <out-dir>/checkpoints/final.ckpt last step, with optimizer state
//! <out-dir>/report.txt             final metrics of the best checkpoint
//! <out-dir>/report.jsonl
//! <out-dir>/per_query.jsonl
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;

use din_rank::data::{apply_normalization, fit_feature_stats, FeatureStats, RankedQuery};
use din_rank::numeric::{DType, Real};
use din_rank::training::{evaluate, train, Checkpoint, LogRecord};

use super::{create_dir, create_writer, flush, jsonl, load_queries, write_file, Common};
use crate::config::{echo, layered, RunConfig};
use crate::error::{require_path, CliError, CliResult};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Root seed of the run.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let out = args
        .common
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Usage("train requires --out-dir".into()))?;
    let flags = args.seed.map(|s| ("seed", toml::Value::Integer(s as i64))).into_iter().collect();
    let table = layered(args.common.config.as_deref(), flags, &args.common.overrides)?;
    let cfg = RunConfig::from_table(table)?;
    cfg.train.validate()?;
    require_path("training data", &cfg.data.train)?;
    for p in cfg.data.valid.iter().chain(&cfg.data.test) {
        require_path("evaluation data", p)?;
    }

    create_dir(&out.join("checkpoints"))?;
    let effective = cfg.to_table();
    echo(&effective, &out)?;
    match cfg.train.precision {
        DType::F32 => run_typed::<f32>(&cfg, &effective, &out),
        DType::F64 => run_typed::<f64>(&cfg, &effective, &out),
    }
}

/// Brings every query to the scorer's feature width; wider files are
/// rejected.
fn fit_width(queries: Vec<RankedQuery>, n: usize, path: &Path) -> CliResult<Vec<RankedQuery>> {
    if let Some(q) = queries.iter().find(|q| q.n_features() > n) {
        return Err(din_rank::Error::Data(format!(
            "{}: query {} has {} features but scorer.n_features is {n}",
            path.display(),
            q.qid,
            q.n_features()
        ))
        .into());
    }
    Ok(queries.into_iter().map(|q| q.with_feature_dim(n)).collect())
}

fn run_typed<T: Real>(cfg: &RunConfig, effective: &toml::Table, out: &Path) -> CliResult<()> {
    let n = cfg.train.scorer.n_features;
    let load = |what, p: &PathBuf| load_queries(what, p).and_then(|q| fit_width(q, n, p));
    let train_q = load("training data", &cfg.data.train)?;
    let stats: Option<FeatureStats> = if cfg.data.normalize {
        Some(fit_feature_stats(&train_q)?)
    } else {
        None
    };
    let norm = |q: Vec<RankedQuery>| -> CliResult<Vec<RankedQuery>> {
        match &stats {
            Some(s) => Ok(apply_normalization(q, s)?),
            None => Ok(q),
        }
    };
    let train_q = norm(train_q)?;
    let valid = match &cfg.data.valid {
        Some(p) => norm(load("validation data", p)?)?,
        None => Vec::new(),
    };
    let test = match &cfg.data.test {
        Some(p) => Some(norm(load("test data", p)?)?),
        None => None,
    };
    info!(
        "training {} on {} queries for {} steps",
        cfg.train.scorer.name(),
        train_q.len(),
        cfg.train.max_steps
    );

    let log_path = out.join("run_log.jsonl");
    let mut log = create_writer(&log_path)?;
    let mut write_error = None;
    let mut observer = |record: &LogRecord| {
        if let LogRecord::Eval(e) = record {
            info!(
                "step {}: NDCG@1/5/10 {:.4}/{:.4}/{:.4} MRR {:.4} selection {:.4}",
                e.step, e.ndcg[0], e.ndcg[1], e.ndcg[2], e.mrr, e.selection
            );
        }
        if write_error.is_none() {
            let line = serde_json::to_string(record).expect("log records serialize");
            write_error = writeln!(log, "{line}").err();
        }
    };
    let outcome = train::<T>(&cfg.train, &train_q, &valid, stats, &mut observer);
    if let Some(e) = write_error {
        return Err(CliError::io(&log_path, e));
    }
    flush(log, &log_path)?;
    let outcome = outcome?;

    let extra = serde_json::to_value(effective).expect("config converts to JSON");
    let save = |ckpt: Checkpoint<T>, name: &str| {
        let mut ckpt = ckpt;
        ckpt.extra = extra.clone();
        ckpt.save(out.join("checkpoints").join(name))
    };
    save(
        Checkpoint::new(outcome.best_model.clone(), None, cfg.train.seed),
        "best.ckpt",
    )?;
    save(
        Checkpoint::new(outcome.final_model.clone(), Some(outcome.optimizer.clone()), cfg.train.seed),
        "final.ckpt",
    )?;

    let (split, queries) = match (&test, valid.is_empty()) {
        (Some(t), _) => ("test", t),
        (None, false) => ("validation", &valid),
        (None, true) => ("train", &train_q),
    };
    let report = evaluate(&outcome.best_model, queries, cfg.train.eval_batch_size, &cfg.train.bootstrap)?;
    let table = format!(
        "best step {} of {}, {split} split\n{}",
        outcome.best_step(),
        cfg.train.max_steps,
        report.to_table()
    );
    write_file(&out.join("report.txt"), &table)?;
    write_file(&out.join("report.jsonl"), &report.to_jsonl())?;
    write_file(&out.join("per_query.jsonl"), &jsonl(&report.per_query))?;
    print!("{table}");
    Ok(())
}
