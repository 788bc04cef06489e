//! Per-query inference latency of scorers on synthetic lists.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore, Real};
use crate::rng::SeedPath;
use crate::scorers::{ModelInput, Scorer};

/// Warmup iterations below this are rejected.
pub const MIN_WARMUP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub warmup: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            warmup: MIN_WARMUP,
            repetitions: 50,
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.warmup < MIN_WARMUP {
            return Err(Error::Config(format!(
                "benchmark warmup must be at least {MIN_WARMUP} iterations, got {}",
                self.warmup
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("benchmark repetitions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Latency distribution of one scorer at one list size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub scorer: String,
    pub list_size: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub repetitions: usize,
    pub param_count: usize,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Times `spec.repetitions` single-list forward passes after `spec.warmup`
/// untimed ones. Exact GSF lists over the group budget are refused before
/// any timing starts.
pub fn benchmark_scorer<T: Real>(
    scorer: &Scorer,
    params: &ParamStore<T>,
    list_size: usize,
    spec: &BenchmarkSpec,
) -> Result<LatencyReport> {
    spec.validate()?;
    let f = scorer.spec().input_width();
    let features: Matrix<T> = Matrix::uniform(
        list_size,
        f,
        1.0,
        &mut SeedPath::new(spec.seed).child("benchmark").index(list_size as u64).rng(),
    );
    let input = ModelInput::single(features);
    for _ in 0..spec.warmup {
        std::hint::black_box(scorer.score(params, &input)?);
    }
    let mut samples = Vec::with_capacity(spec.repetitions);
    for _ in 0..spec.repetitions {
        let t = Instant::now();
        std::hint::black_box(scorer.score(params, &input)?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyReport {
        scorer: scorer.spec().name(),
        list_size,
        median_ms: percentile(&samples, 50.0),
        p95_ms: percentile(&samples, 95.0),
        repetitions: spec.repetitions,
        param_count: scorer.param_count(),
    })
}
