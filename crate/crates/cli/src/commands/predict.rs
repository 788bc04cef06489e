//! `din-rank predict`: per-document scores and ranks.
//!
//! Output is tab-separated `qid doc score rank` with a header line, in file
//! order. Ranks are 1-based and come from the same ordering the metrics use,
//! so ties go to the earlier document.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use din_rank::metrics::ranking_order;

use super::{create_dir, load_checkpoint, load_queries, with_model, write_file, Common};
use crate::config::{echo, from_table, layered, path_value, to_table, PredictConfig};
use crate::error::{require_path, CliResult};

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// LibSVM ranking file; labels are read but not used.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

/// Renders one query's lines.
pub fn format_query(out: &mut String, qid: &str, scores: &[f64]) {
    let mut rank = vec![0; scores.len()];
    for (pos, &doc) in ranking_order(scores).iter().enumerate() {
        rank[doc] = pos + 1;
    }
    for (doc, s) in scores.iter().enumerate() {
        let _ = writeln!(out, "{qid}\t{doc}\t{s}\t{}", rank[doc]);
    }
}

pub fn run(args: &PredictArgs) -> CliResult<()> {
    let mut flags = Vec::new();
    if let Some(p) = &args.checkpoint {
        flags.push(("checkpoint", path_value(p)));
    }
    if let Some(p) = &args.data {
        flags.push(("data", path_value(p)));
    }
    let cfg: PredictConfig = from_table(
        layered(args.common.config.as_deref(), flags, &args.common.overrides)?,
        "predict",
    )?;
    require_path("checkpoint", &cfg.checkpoint)?;
    require_path("prediction data", &cfg.data)?;

    let checkpoint = load_checkpoint(&cfg.checkpoint)?;
    let queries = load_queries("prediction data", &cfg.data)?;
    let qids: Vec<String> = queries.iter().map(|q| q.qid.clone()).collect();
    let scores = with_model!(checkpoint, model => {
        let prepared = model.prepare(queries)?;
        model.score_queries(&prepared, cfg.batch_size)?
    });
    let mut text = String::from("qid\tdoc\tscore\trank\n");
    for (qid, s) in qids.iter().zip(&scores) {
        format_query(&mut text, qid, s);
    }

    match &args.common.out_dir {
        Some(out) => {
            create_dir(out)?;
            echo(&to_table(&cfg), out)?;
            write_file(&out.join("predictions.tsv"), &text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
