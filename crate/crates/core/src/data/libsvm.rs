//! LibSVM ranking format: `<grade> qid:<id> <idx>:<val> ... [# comment]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::RankedQuery;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

struct PendingQuery {
    labels: Vec<u32>,
    rows: Vec<Vec<(usize, f32)>>,
}

/// Parses a ranking file. Documents keep file order within each query; queries
/// are ordered by first appearance, and lines of one qid need not be
/// contiguous. The feature dimension is the largest index seen.
pub fn parse_ranking_file(path: impl AsRef<Path>) -> Result<Vec<RankedQuery>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ranking_reader(BufReader::new(file), &path.display().to_string())
}

pub fn parse_ranking_reader(reader: impl BufRead, source: &str) -> Result<Vec<RankedQuery>> {
    let mut pending: IndexMap<String, PendingQuery> = IndexMap::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno + 1,
            msg,
        };
        let mut tokens = content.split_ascii_whitespace();
        let grade_tok = tokens.next().ok_or_else(|| err("missing relevance grade".into()))?;
        let grade = parse_grade(grade_tok).ok_or_else(|| err(format!("bad relevance grade `{grade_tok}`")))?;
        let qid_tok = tokens.next().ok_or_else(|| err("missing qid".into()))?;
        let qid = qid_tok
            .strip_prefix("qid:")
            .filter(|q| !q.is_empty())
            .ok_or_else(|| err(format!("expected `qid:<id>`, found `{qid_tok}`")))?;
        let mut row = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected `<index>:<value>`, found `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index `{idx}`")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f32 = val
                .parse()
                .map_err(|_| err(format!("bad feature value `{val}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value `{val}`")));
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        let q = pending.entry(qid.to_string()).or_insert_with(|| PendingQuery {
            labels: Vec::new(),
            rows: Vec::new(),
        });
        q.labels.push(grade);
        q.rows.push(row);
    }
    Ok(pending
        .into_iter()
        .map(|(qid, q)| {
            let mut features = Matrix::zeros(q.rows.len(), max_index);
            for (i, row) in q.rows.iter().enumerate() {
                for &(j, v) in row {
                    features[(i, j)] = v;
                }
            }
            RankedQuery {
                qid,
                labels: q.labels,
                features,
            }
        })
        .collect())
}

fn parse_grade(tok: &str) -> Option<u32> {
    if let Ok(g) = tok.parse::<u32>() {
        return Some(g);
    }
    let g: f64 = tok.parse().ok()?;
    (g >= 0.0 && g.fract() == 0.0 && g <= f64::from(u32::MAX)).then_some(g as u32)
}

/// Writes queries in the same format, every feature index explicit.
pub fn write_ranking(queries: &[RankedQuery], mut out: impl Write) -> std::io::Result<()> {
    for q in queries {
        for (i, &label) in q.labels.iter().enumerate() {
            write!(out, "{label} qid:{}", q.qid)?;
            for (j, v) in q.features.row(i).iter().enumerate() {
                write!(out, " {}:{}", j + 1, v)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn write_ranking_file(queries: &[RankedQuery], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ranking(queries, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
