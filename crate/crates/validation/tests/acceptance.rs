//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so each criterion prints a
//! single `PASS`/`FAIL` line with its measured values. The process exits
//! non-zero when any criterion fails. `ACCEPTANCE_ONLY=1,4` restricts the
//! run to the listed criteria.
//!
//! Criterion 6 needs the MSLR-WEB30K Fold1 files (`train.txt`, `vali.txt`,
//! `test.txt`) in the directory named by `WEB30K_FOLD1_DIR`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use din_rank::benchmark::{benchmark_scorer, BenchmarkSpec};
use din_rank::data::{fit_feature_stats, filter_no_relevant, parse_ranking_file, apply_normalization, RankedQuery};
use din_rank::layers::{AttentionBlockSpec, DenseBlockSpec, ForwardCtx, ListLayout};
use din_rank::losses::{approx_ndcg, approx_rank, LossSpec};
use din_rank::metrics::{bootstrap_ci, ndcg_at_k, BootstrapSpec, MetricKind};
use din_rank::numeric::{Matrix, ParamStore, Real, Tape};
use din_rank::rng::SeedPath;
use din_rank::scorers::{GsfInference, ModelInput, Scorer, ScorerFamily, ScorerSpec};
use din_rank::training::{evaluate, make_synthetic_max_task, train, Checkpoint, LogRecord, Model, TrainConfig};

// Tolerances and time budgets per criterion.
const EQUIVARIANCE_TOL: f64 = 1e-5;
const EQUIVARIANCE_TRIALS: usize = 100;
const EQUIVARIANCE_BUDGET: Duration = Duration::from_secs(60);
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
/// Denominator floor of the relative gradient error, for coordinates whose
/// true gradient is near zero.
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_INSTANCES: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const RANK_TOL: f64 = 1e-3;
const RANK_ETA: f64 = 50.0;
const NDCG_EQ_TOL: f64 = 1e-9;
/// Smallest score separation drawn in the rank-fidelity lists. A gap g
/// contributes a rank error of about exp(-η·g), so the tolerance is reachable
/// only for gaps of order 1/η and above.
const MIN_SCORE_GAP: f64 = 0.3;
const GSF_ORACLE_TOL: f64 = 1e-6;
const DIN_NDCG1_MIN: f64 = 0.9;
const UNIVARIATE_NDCG1_MAX: f64 = 0.35;
const DISCRIMINATION_BUDGET: Duration = Duration::from_secs(15 * 60);
const WEB30K_GAP_MIN: f64 = 0.3;
const WEB30K_BUDGET: Duration = Duration::from_secs(2 * 3600);
const LATENCY_RATIO_MIN: f64 = 5.0;

type Outcome = Result<String, String>;

fn main() {
    let only: Option<BTreeSet<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let criteria: Vec<(&str, &str, fn() -> Outcome)> = vec![
        ("1", "equivariance suite", equivariance_suite),
        ("2", "gradient correctness", gradient_correctness),
        ("3", "ApproxNDCG fidelity", approx_ndcg_fidelity),
        ("4", "GSF oracle equivalence", gsf_oracle_equivalence),
        ("5", "cross-document discrimination", cross_document_discrimination),
        ("5s", "supplemental: context-flip task", supplemental_context_task),
        ("6", "Web30k scaled run", web30k_scaled_run),
        ("7", "efficiency direction", efficiency_direction),
        ("8", "parameter-count ordering", parameter_count_ordering),
        ("9", "determinism & round-trip", determinism_round_trip),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(id)) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                println!("FAIL [{id}] {name} ({secs:.1}s): {detail}");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} failing criteria: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
    println!("acceptance: all criteria pass");
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn permute_rows<T: Real>(x: &Matrix<T>, perm: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(i).copy_from_slice(x.row(p));
    }
    out
}

/// Draws running statistics away from their (0, 1) initialization.
fn randomize_running_stats<T: Real>(store: &mut ParamStore<T>, seed: SeedPath) {
    let names: Vec<String> = store
        .names()
        .filter(|n| n.ends_with("running_mean") || n.ends_with("running_var"))
        .map(str::to_string)
        .collect();
    for (k, name) in names.iter().enumerate() {
        let cols = store.value(name).unwrap().cols();
        let noise: Matrix<T> = Matrix::uniform(1, cols, 0.5, &mut seed.index(k as u64).rng());
        let value = if name.ends_with("var") {
            noise.map(|v| T::one() + v)
        } else {
            noise
        };
        store.set_value(name, value).unwrap();
    }
}

// ---------------------------------------------------------------- 1

fn equivariance_suite() -> Outcome {
    let started = Instant::now();
    let root = SeedPath::new(1).child("equivariance");
    let mut worst = [0f64; 3];
    let families = ["univariate", "gsf(m=2,exact)", "attn-din"];
    for (fi, family) in families.iter().enumerate() {
        for trial in 0..EQUIVARIANCE_TRIALS {
            let seed = root.child(family).index(trial as u64);
            let mut rng = seed.rng();
            let n = rng.gen_range(2..=50);
            let f = rng.gen_range(20..=136);
            let dense = DenseBlockSpec::new(vec![32, 16]);
            let spec = match fi {
                0 => ScorerSpec::univariate(f, dense),
                1 => ScorerSpec::gsf(f, 2, dense),
                _ => ScorerSpec::attn_din(f, AttentionBlockSpec::new(16, 2, 2), dense),
            };
            let scorer = Scorer::new(spec).unwrap();
            let mut params = scorer.init_params::<f32>(seed.child("params"));
            randomize_running_stats(&mut params, seed.child("stats"));
            let x: Matrix<f32> = Matrix::uniform(n, f, 2.0, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let base = scorer.score(&params, &ModelInput::single(x.clone())).unwrap();
            let moved = scorer.score(&params, &ModelInput::single(permute_rows(&x, &perm))).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                let (a, b) = (f64::from(moved.scores[i]), f64::from(base.scores[p]));
                worst[fi] = worst[fi].max((a - b).abs() / (1.0 + b.abs()));
            }
        }
    }
    let elapsed = started.elapsed();
    let max = worst.iter().copied().fold(0.0, f64::max);
    check(
        max <= EQUIVARIANCE_TOL && elapsed < EQUIVARIANCE_BUDGET,
        format!(
            "max relative discrepancy univariate {:.2e}, gsf {:.2e}, attn-din {:.2e} (tol {EQUIVARIANCE_TOL:.0e}) over {EQUIVARIANCE_TRIALS} f32 trials each in {:.1}s",
            worst[0],
            worst[1],
            worst[2],
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn loss_value(scorer: &Scorer, params: &ParamStore<f64>, x: &Matrix<f64>, labels: &[u32], loss: LossSpec) -> f64 {
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::train(SeedPath::new(0));
    let s = scorer
        .forward(&mut tape, params, &ModelInput::single(x.clone()), &mut ctx)
        .unwrap();
    let mask = vec![true; labels.len()];
    let l = loss.batch_loss(&mut tape, s, labels, &mask, labels.len()).unwrap();
    tape.value(l).scalar()
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let root = SeedPath::new(2).child("gradients");
    let mut worst = 0f64;
    let mut worst_at = String::new();
    let mut checked = 0usize;
    for inst in 0..GRAD_INSTANCES {
        let seed = root.index(inst as u64);
        let mut rng = seed.rng();
        let n = 3 + inst % 3;
        let f = 4;
        let spec = ScorerSpec::attn_din(f, AttentionBlockSpec::new(4, 2, 2), DenseBlockSpec::new(vec![6, 4]));
        let scorer = Scorer::new(spec).unwrap();
        let x: Matrix<f64> = Matrix::uniform(n, f, 1.5, &mut rng);
        let mut labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        labels[rng.gen_range(0..n)] = rng.gen_range(1..=2);
        for loss in [LossSpec::Softmax, LossSpec::ApproxNdcg { eta: 1.0 }] {
            let mut params = scorer.init_params::<f64>(seed.child("params"));
            let mut tape = Tape::new();
            let mut ctx = ForwardCtx::train(SeedPath::new(0));
            let s = scorer
                .forward(&mut tape, &params, &ModelInput::single(x.clone()), &mut ctx)
                .unwrap();
            let mask = vec![true; n];
            let l = loss.batch_loss(&mut tape, s, &labels, &mask, n).unwrap();
            params.zero_grads();
            tape.backward(l, &mut params).unwrap();
            let names: Vec<String> = params.trainable_names().map(str::to_string).collect();
            for name in names {
                let analytic = params.grad(&name).unwrap().clone();
                let original = params.value(&name).unwrap().clone();
                for idx in 0..original.len() {
                    let mut plus = original.clone();
                    plus.data_mut()[idx] += GRAD_STEP;
                    params.set_value(&name, plus).unwrap();
                    let up = loss_value(&scorer, &params, &x, &labels, loss);
                    let mut minus = original.clone();
                    minus.data_mut()[idx] -= GRAD_STEP;
                    params.set_value(&name, minus).unwrap();
                    let down = loss_value(&scorer, &params, &x, &labels, loss);
                    params.set_value(&name, original.clone()).unwrap();
                    let numeric = (up - down) / (2.0 * GRAD_STEP);
                    let a = analytic.data()[idx];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
                    checked += 1;
                    if rel > worst {
                        worst = rel;
                        worst_at = format!("{} {name}[{idx}] analytic {a:.6e} numeric {numeric:.6e}", loss.name());
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    check(
        worst < GRAD_TOL && elapsed < GRAD_BUDGET,
        format!(
            "max relative error {worst:.2e} (tol {GRAD_TOL:.0e}, floor {GRAD_FLOOR:.0e}) over {checked} coordinates, {GRAD_INSTANCES} instances x 2 losses, {:.1}s; worst at {worst_at}",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn approx_ndcg_fidelity() -> Outcome {
    let root = SeedPath::new(3).child("approx-ndcg");
    let mut rank_err = 0f64;
    let mut ndcg_err = 0f64;
    for i in 0..50u64 {
        let mut rng = root.index(i).rng();
        let n = rng.gen_range(2..=30);
        // distinct scores: random gaps of at least MIN_SCORE_GAP, random order
        let mut level = rng.gen_range(-3.0..3.0);
        let mut scores: Vec<f64> = (0..n)
            .map(|_| {
                level += rng.gen_range(MIN_SCORE_GAP..5.0 * MIN_SCORE_GAP);
                level
            })
            .collect();
        scores.shuffle(&mut rng);
        let labels: Vec<u32> = {
            let mut y: Vec<u32> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            y[0] = y[0].max(1);
            y
        };
        let order = din_rank::metrics::ranking_order(&scores);
        let mut exact = vec![0.0; n];
        for (pos, &doc) in order.iter().enumerate() {
            exact[doc] = pos as f64 + 1.0;
        }
        let approx = approx_rank(&scores, RANK_ETA);
        for (a, e) in approx.iter().zip(&exact) {
            rank_err = rank_err.max((a - e).abs());
        }
        // with exact ranks substituted, the gain is the full-list NDCG
        let gains: f64 = labels
            .iter()
            .zip(&exact)
            .map(|(&y, &r)| (2f64.powi(y as i32) - 1.0) / (1.0 + r).log2())
            .sum();
        let mut ideal = labels.clone();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let z: f64 = ideal
            .iter()
            .enumerate()
            .map(|(r, &y)| (2f64.powi(y as i32) - 1.0) / (r as f64 + 2.0).log2())
            .sum();
        let full = ndcg_at_k(&labels, &scores, n).unwrap();
        ndcg_err = ndcg_err.max((gains / z - full).abs());
        // and the loss itself converges to it as the sigmoid sharpens
        let sharp = -approx_ndcg(&labels, &scores, 1e6).unwrap().0;
        ndcg_err = ndcg_err.max((sharp - full).abs());
    }
    check(
        rank_err <= RANK_TOL && ndcg_err <= NDCG_EQ_TOL,
        format!("max |r̂ - r| at η={RANK_ETA} is {rank_err:.2e} (tol {RANK_TOL:.0e}); max |gain - NDCG| {ndcg_err:.2e} (tol {NDCG_EQ_TOL:.0e}) over 50 lists with score gaps >= {MIN_SCORE_GAP}"),
    )
}

// ---------------------------------------------------------------- 4

/// Inference-mode dense block evaluated one input row at a time.
fn naive_dense(store: &ParamStore<f64>, spec: &DenseBlockSpec, x: &[f64]) -> Vec<f64> {
    let get = |n: String| store.value(&n).unwrap().data().to_vec();
    let bn = |p: &str, h: Vec<f64>| -> Vec<f64> {
        let (g, b) = (get(format!("{p}.gain")), get(format!("{p}.bias")));
        let (mu, var) = (get(format!("{p}.running_mean")), get(format!("{p}.running_var")));
        (0..h.len())
            .map(|j| (h[j] - mu[j]) / (var[j] + spec.batch_norm_epsilon).sqrt() * g[j] + b[j])
            .collect()
    };
    let linear = |p: &str, h: Vec<f64>| -> Vec<f64> {
        let w = store.value(&format!("{p}.weight")).unwrap();
        let b = get(format!("{p}.bias"));
        (0..w.cols())
            .map(|o| b[o] + (0..w.rows()).map(|i| h[i] * w[(i, o)]).sum::<f64>())
            .collect()
    };
    let mut h = x.to_vec();
    if spec.input_batch_norm {
        h = bn("dense.input_bn", h);
    }
    for i in 0..spec.widths.len() {
        h = linear(&format!("dense.fc{i}"), h);
        h = bn(&format!("dense.fc{i}.bn"), h);
        h = h.into_iter().map(|v| v.max(0.0)).collect();
    }
    linear("dense.out", h)
}

fn gsf_oracle_equivalence() -> Outcome {
    let root = SeedPath::new(4).child("gsf");
    let dense = DenseBlockSpec::new(vec![8, 4]);
    let mut worst = 0f64;
    for n in 2..=10usize {
        let seed = root.index(n as u64);
        let f = 5;
        let scorer = Scorer::new(ScorerSpec::gsf(f, 2, dense.clone())).unwrap();
        let mut params = scorer.init_params::<f64>(seed.child("params"));
        randomize_running_stats(&mut params, seed.child("stats"));
        let x: Matrix<f64> = Matrix::uniform(n, f, 2.0, &mut seed.rng());
        let scores = scorer.score(&params, &ModelInput::single(x.clone())).unwrap();
        for i in 0..n {
            let mut total = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let ij: Vec<f64> = x.row(i).iter().chain(x.row(j)).copied().collect();
                let ji: Vec<f64> = x.row(j).iter().chain(x.row(i)).copied().collect();
                total += naive_dense(&params, &dense, &ij)[0] + naive_dense(&params, &dense, &ji)[1];
            }
            let oracle = total / (2.0 * (n - 1) as f64);
            worst = worst.max((scores.scores[i] - oracle).abs());
        }
    }

    // subsample mode: search permutations for a broken equivariance
    let mut spec = ScorerSpec::gsf(5, 2, dense);
    if let ScorerFamily::Gsf { inference, .. } = &mut spec.family {
        *inference = GsfInference::Subsample { stride: 1, seed: 7 };
    }
    let scorer = Scorer::new(spec).unwrap();
    let params = scorer.init_params::<f64>(root.child("subsample"));
    let x: Matrix<f64> = Matrix::uniform(8, 5, 2.0, &mut root.child("subsample-x").rng());
    let base = scorer.score(&params, &ModelInput::single(x.clone())).unwrap();
    let mut counterexample = None;
    for t in 0..200u64 {
        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut root.child("perm").index(t).rng());
        let moved = scorer.score(&params, &ModelInput::single(permute_rows(&x, &perm))).unwrap();
        let gap = perm
            .iter()
            .enumerate()
            .map(|(i, &p)| (moved.scores[i] - base.scores[p]).abs())
            .fold(0.0, f64::max);
        if gap > 1e-6 {
            counterexample = Some((t, gap));
            break;
        }
    }
    match counterexample {
        Some((t, gap)) => check(
            worst <= GSF_ORACLE_TOL,
            format!("max |exact - brute force| {worst:.2e} (tol {GSF_ORACLE_TOL:.0e}) for n=2..10; subsample counterexample at permutation #{t}, score gap {gap:.3e}"),
        ),
        None => Err(format!("oracle error {worst:.2e}; no subsample counterexample among 200 permutations")),
    }
}

// ---------------------------------------------------------------- 5

fn matched_head() -> DenseBlockSpec {
    DenseBlockSpec::new(vec![64, 32, 16])
}

fn synthetic_din(f: usize) -> ScorerSpec {
    ScorerSpec::attn_din(f, AttentionBlockSpec::new(32, 2, 2), matched_head())
}

/// Trains `spec` with the shared synthetic-task settings and returns the
/// test NDCG@1 of the checkpoint selected on `valid`.
fn train_and_test(spec: ScorerSpec, steps: u64, train_q: &[RankedQuery], valid: &[RankedQuery], test: &[RankedQuery]) -> f64 {
    let cfg = TrainConfig {
        learning_rate: 0.05,
        eval_every: 100,
        ..TrainConfig::new(spec, LossSpec::Softmax, steps)
    };
    let out = train::<f32>(&cfg, train_q, valid, None, &mut |_: &LogRecord| {}).unwrap();
    evaluate(&out.best_model, test, 256, &BootstrapSpec::default())
        .unwrap()
        .mean(MetricKind::Ndcg, Some(1))
}

/// Best test NDCG@1 over the scorers that sort by one raw feature, in
/// either direction: a brute-force lower bound on what a univariate scorer
/// can reach.
fn monotone_univariate_bound(test: &[RankedQuery]) -> (f64, usize) {
    let f = test[0].n_features();
    let mut best = (0.0, 0);
    for j in 0..f {
        for sign in [1.0, -1.0] {
            let mean = test
                .iter()
                .map(|q| {
                    let s: Vec<f64> = (0..q.n_docs()).map(|i| sign * f64::from(q.features[(i, j)])).collect();
                    ndcg_at_k(&q.labels, &s, 1).unwrap()
                })
                .sum::<f64>()
                / test.len() as f64;
            if mean > best.0 {
                best = (mean, j);
            }
        }
    }
    best
}

fn cross_document_discrimination() -> Outcome {
    let started = Instant::now();
    let train_q = make_synthetic_max_task(5000, 10, 5, 51).unwrap();
    let valid = make_synthetic_max_task(500, 10, 5, 52).unwrap();
    let test = make_synthetic_max_task(1000, 10, 5, 53).unwrap();
    let steps = 1000;
    let din = train_and_test(synthetic_din(5), steps, &train_q, &valid, &test);
    let uni = train_and_test(ScorerSpec::univariate(5, matched_head()), steps, &train_q, &valid, &test);
    let (bound, feature) = monotone_univariate_bound(&test);
    let elapsed = started.elapsed();
    check(
        din >= DIN_NDCG1_MIN && uni <= UNIVARIATE_NDCG1_MAX && elapsed < DISCRIMINATION_BUDGET,
        format!(
            "test NDCG@1 attn-din {din:.3} (need >= {DIN_NDCG1_MIN}), univariate {uni:.3} (need <= {UNIVARIATE_NDCG1_MAX}) after {steps} steps each, {:.0}s; \
             brute-force monotone univariate bound {bound:.3} (sort by feature {feature}): the relevant document is the per-list maximum of a raw feature, \
             so a univariate scorer can rank it first and the univariate ceiling is unattainable by construction",
            elapsed.as_secs_f64()
        ),
    )
}

/// Lists where the sort direction of feature 0 flips with the list mean of
/// feature 1, which no single document reveals.
fn context_flip_task(n_queries: usize, seed: u64) -> Vec<RankedQuery> {
    let root = SeedPath::new(seed).child("context-flip");
    (0..n_queries)
        .map(|q| {
            let mut rng = root.index(q as u64).rng();
            let (n, f) = (10, 5);
            let data: Vec<f32> = (0..n * f).map(|_| rng.gen()).collect();
            let x = Matrix::from_vec(n, f, data).unwrap();
            let mean = (0..n).map(|i| x[(i, 1)]).sum::<f32>() / n as f32;
            let sign = if mean > 0.5 { 1.0 } else { -1.0 };
            let best = (0..n)
                .max_by(|&a, &b| (sign * x[(a, 0)]).total_cmp(&(sign * x[(b, 0)])))
                .unwrap();
            let labels = (0..n).map(|i| u32::from(i == best)).collect();
            RankedQuery::new(format!("flip-{q}"), labels, x)
        })
        .collect()
}

fn supplemental_context_task() -> Outcome {
    let train_q = context_flip_task(5000, 61);
    let valid = context_flip_task(500, 62);
    let test = context_flip_task(1000, 63);
    let steps = 2000;
    let din = train_and_test(synthetic_din(5), steps, &train_q, &valid, &test);
    let uni = train_and_test(ScorerSpec::univariate(5, matched_head()), steps, &train_q, &valid, &test);
    let (bound, _) = monotone_univariate_bound(&test);
    check(
        din >= DIN_NDCG1_MIN && uni <= 0.6,
        format!("not a listed criterion; test NDCG@1 attn-din {din:.3} (need >= {DIN_NDCG1_MIN}), univariate {uni:.3} (need <= 0.6), best single-feature sort {bound:.3}"),
    )
}

// ---------------------------------------------------------------- 6

fn web30k_scaled_run() -> Outcome {
    let started = Instant::now();
    let dir = std::env::var_os("WEB30K_FOLD1_DIR").map(PathBuf::from);
    let Some(dir) = dir.filter(|d| d.join("train.txt").is_file() && d.join("test.txt").is_file()) else {
        return Err("MSLR-WEB30K Fold1 not available: set WEB30K_FOLD1_DIR to a directory with train.txt, vali.txt and test.txt; criterion not evaluated".into());
    };
    let load = |name: &str| parse_ranking_file(dir.join(name)).map_err(|e| e.to_string());
    let mut train_all = filter_no_relevant(load("train.txt")?);
    train_all.shuffle(&mut SeedPath::new(6).child("web30k-subsample").rng());
    train_all.truncate(3000);
    let n_features = 136;
    let align = |q: Vec<RankedQuery>| din_rank::data::align_feature_dim(q, n_features);
    let train_q = align(train_all);
    let stats = fit_feature_stats(&train_q).map_err(|e| e.to_string())?;
    let train_q = apply_normalization(train_q, &stats).map_err(|e| e.to_string())?;
    let valid = match load("vali.txt") {
        Ok(v) => apply_normalization(align(filter_no_relevant(v)), &stats).map_err(|e| e.to_string())?,
        Err(_) => Vec::new(),
    };
    let test = apply_normalization(align(filter_no_relevant(load("test.txt")?)), &stats).map_err(|e| e.to_string())?;

    let head = DenseBlockSpec::new(vec![128, 64, 32, 16]);
    let specs = [
        ScorerSpec::attn_din(n_features, AttentionBlockSpec::new(100, 1, 1), head.clone()),
        ScorerSpec::univariate(n_features, head),
    ];
    let seeds = [0u64, 1, 2];
    // per-query NDCG@5 averaged over seeds, per scorer
    let mut per_query = vec![vec![0.0; test.len()]; 2];
    for (s, spec) in specs.iter().enumerate() {
        for &seed in &seeds {
            let cfg = TrainConfig {
                seed,
                batch_size: 32,
                eval_every: 250,
                eval_batch_size: 16,
                ..TrainConfig::new(spec.clone(), LossSpec::approx_ndcg(), 1500)
            };
            let out = train::<f32>(&cfg, &train_q, &valid, Some(stats.clone()), &mut |_: &LogRecord| {})
                .map_err(|e| e.to_string())?;
            let report = evaluate(&out.best_model, &test, 16, &BootstrapSpec::default()).map_err(|e| e.to_string())?;
            for (acc, q) in per_query[s].iter_mut().zip(&report.per_query) {
                *acc += q.ndcg[1].unwrap_or(0.0) / seeds.len() as f64;
            }
        }
    }
    let summarize = |v: &[f64], name: &str| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let (lo, hi) = bootstrap_ci(v, &BootstrapSpec::default(), SeedPath::new(6).child(name));
        (mean * 100.0, lo * 100.0, hi * 100.0)
    };
    let din = summarize(&per_query[0], "din");
    let uni = summarize(&per_query[1], "uni");
    let elapsed = started.elapsed();
    check(
        din.0 - uni.0 >= WEB30K_GAP_MIN && din.1 > uni.2 && elapsed < WEB30K_BUDGET,
        format!(
            "test NDCG@5 attn-din {:.2} [{:.2}, {:.2}] vs univariate {:.2} [{:.2}, {:.2}], gap {:.2} (need >= {WEB30K_GAP_MIN}) over {} seeds, {:.0}s",
            din.0, din.1, din.2, uni.0, uni.1, uni.2, din.0 - uni.0, seeds.len(), elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn efficiency_direction() -> Outcome {
    let f = 136;
    let head = matched_head();
    let bench = BenchmarkSpec {
        warmup: 20,
        repetitions: 20,
        seed: 7,
    };
    let din = Scorer::new(ScorerSpec::attn_din(f, AttentionBlockSpec::new(100, 1, 1), head.clone())).unwrap();
    let gsf = Scorer::new(ScorerSpec::gsf(f, 2, head)).unwrap();
    let din_params = din.init_params::<f32>(SeedPath::new(7).child("din"));
    let gsf_params = gsf.init_params::<f32>(SeedPath::new(7).child("gsf"));
    let d = benchmark_scorer(&din, &din_params, 200, &bench).map_err(|e| e.to_string())?;
    let g = benchmark_scorer(&gsf, &gsf_params, 200, &bench).map_err(|e| e.to_string())?;
    let ratio = g.median_ms / d.median_ms;
    check(
        ratio >= LATENCY_RATIO_MIN,
        format!(
            "list size 200: attn-din median {:.2} ms (p95 {:.2}), exact gsf(m=2) median {:.2} ms (p95 {:.2}) over 200·199 = 39800 sub-network evaluations; ratio {ratio:.1}x (need >= {LATENCY_RATIO_MIN}x)",
            d.median_ms, d.p95_ms, g.median_ms, g.p95_ms
        ),
    )
}

// ---------------------------------------------------------------- 8

fn parameter_count_ordering() -> Outcome {
    let f = 136;
    let head = DenseBlockSpec::new(vec![1024, 512, 256, 128, 64, 32, 16]);
    let enumerate = |spec: ScorerSpec| -> usize {
        let scorer = Scorer::new(spec).unwrap();
        let store = scorer.init_params::<f32>(SeedPath::new(8));
        let counted = store.num_trainable_scalars();
        assert_eq!(counted, scorer.param_count(), "closed form disagrees with enumeration");
        counted
    };
    let uni = enumerate(ScorerSpec::univariate(f, head.clone()));
    let din = enumerate(ScorerSpec::attn_din(f, AttentionBlockSpec::new(100, 1, 1), head.clone()));
    let din_extra = din - uni;
    let mut gsf_extra = Vec::new();
    for m in 8..=16 {
        gsf_extra.push((m, enumerate(ScorerSpec::gsf(f, m, head.clone())) - uni));
    }
    let ok = gsf_extra.iter().all(|&(_, e)| din_extra < e);
    check(
        ok,
        format!(
            "at widths 136 → 1024…16, attention k=100: univariate {uni}, attn-din +{din_extra}, gsf {}",
            gsf_extra
                .iter()
                .map(|(m, e)| format!("m={m} +{e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 9

fn determinism_round_trip() -> Outcome {
    let data = make_synthetic_max_task(60, 8, 4, 91).unwrap();
    let valid = make_synthetic_max_task(20, 8, 4, 92).unwrap();
    let mut spec = synthetic_din(4);
    spec.dense.dropout = 0.1;
    let cfg = TrainConfig {
        batch_size: 16,
        eval_every: 10,
        learning_rate: 0.05,
        ..TrainConfig::new(spec, LossSpec::approx_ndcg(), 40)
    };
    let a = train::<f64>(&cfg, &data, &valid, None, &mut |_: &LogRecord| {}).unwrap();
    let b = train::<f64>(&cfg, &data, &valid, None, &mut |_: &LogRecord| {}).unwrap();
    let same_history = a.history == b.history && a.losses == b.losses;
    let same_params = a
        .final_model
        .params
        .iter()
        .all(|(n, v, _)| b.final_model.params.value(n).unwrap() == v);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    Checkpoint::new(a.final_model.clone(), Some(a.optimizer.clone()), cfg.seed)
        .save(&path)
        .unwrap();
    let loaded: Model<f64> = Checkpoint::load(&path).unwrap().model;
    let before = a.final_model.score_queries(&valid, 8).unwrap();
    let after = loaded.score_queries(&valid, 8).unwrap();
    let bit_exact = before
        .iter()
        .flatten()
        .zip(after.iter().flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits());

    // a layout with padding scores the same lists bit-identically too
    let padded_layout = ListLayout::new(1, 9, (0..9).map(|i| i < 8).collect());
    let mut padded = Matrix::zeros(9, 4);
    for r in 0..8 {
        padded.row_mut(r).copy_from_slice(&valid[0].features.cast::<f64>().row(r));
    }
    let served = loaded
        .scorer
        .score(&loaded.params, &ModelInput::new(padded, padded_layout).unwrap())
        .unwrap();
    let padded_exact = served.valid(0).iter().zip(&before[0]).all(|(x, y)| x.to_bits() == y.to_bits());

    check(
        same_history && same_params && bit_exact && padded_exact,
        format!(
            "{} eval records and {} losses identical across runs: {}; parameters identical: {same_params}; checkpoint reload bit-exact: {bit_exact}; padded serving bit-exact: {padded_exact}",
            a.history.len(),
            a.losses.len(),
            same_history
        ),
    )
}
