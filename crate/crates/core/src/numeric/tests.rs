//! Finite-difference checks for every differentiable primitive plus the
//! worked examples for softmax, layer norm, batch norm, and dropout.

use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::rng::SeedPath;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Builds `sum(weights ⊙ f(inputs))` so every output entry gets a distinct adjoint.
fn check_op(
    inputs: Vec<Matrix<f64>>,
    seed: u64,
    f: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
) {
    let weights = {
        let mut tape = Tape::new();
        let ids: Vec<_> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let out = f(&mut tape, &ids);
        let (r, c) = tape.shape(out);
        Matrix::<f64>::uniform(r, c, 1.0, &mut SeedPath::new(seed).rng())
    };
    let eval = |inputs: &[Matrix<f64>]| -> (f64, Option<Vec<Matrix<f64>>>) {
        let mut tape = Tape::new();
        let ids: Vec<_> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let out = f(&mut tape, &ids);
        let weighted = tape.mul_const(out, Arc::new(weights.clone())).unwrap();
        let loss = tape.sum(weighted);
        let grads = tape.gradients(loss).unwrap();
        let g = ids
            .iter()
            .map(|&id| {
                grads
                    .get(id)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(tape.shape(id).0, tape.shape(id).1))
            })
            .collect();
        (tape.value(loss).scalar(), Some(g))
    };
    let (_, analytic) = eval(&inputs);
    let analytic = analytic.unwrap();
    for (k, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[idx] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[idx] -= STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * STEP);
            let a = analytic[k].data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(
                rel < TOL,
                "input {k} entry {idx}: analytic {a} vs numeric {numeric} (rel {rel})"
            );
        }
    }
}

fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    Matrix::uniform(rows, cols, 2.0, &mut SeedPath::new(seed).rng())
}

#[test]
fn matmul_adjoints_match_finite_differences() {
    check_op(vec![rand_matrix(3, 4, 1), rand_matrix(4, 2, 2)], 3, |t, x| {
        t.matmul(x[0], x[1]).unwrap()
    });
}

#[test]
fn matmul_nt_adjoints_match_finite_differences() {
    check_op(vec![rand_matrix(3, 4, 4), rand_matrix(5, 4, 5)], 6, |t, x| {
        t.matmul_nt(x[0], x[1], 0.5).unwrap()
    });
}

#[test]
fn elementwise_and_structural_adjoints() {
    check_op(vec![rand_matrix(3, 2, 7), rand_matrix(3, 2, 8)], 9, |t, x| {
        t.add(x[0], x[1]).unwrap()
    });
    check_op(vec![rand_matrix(3, 2, 10), rand_matrix(1, 2, 11)], 12, |t, x| {
        t.add_row(x[0], x[1]).unwrap()
    });
    check_op(vec![rand_matrix(3, 2, 13)], 14, |t, x| t.scale(x[0], -1.5));
    check_op(vec![rand_matrix(4, 3, 15)], 16, |t, x| t.relu(x[0]));
    check_op(vec![rand_matrix(3, 2, 17), rand_matrix(3, 1, 18)], 19, |t, x| {
        t.concat_cols(&[x[0], x[1], x[0]]).unwrap()
    });
    check_op(vec![rand_matrix(2, 3, 20), rand_matrix(1, 3, 21)], 22, |t, x| {
        t.concat_rows(&[x[0], x[1]]).unwrap()
    });
    check_op(vec![rand_matrix(5, 3, 23)], 24, |t, x| {
        let a = t.slice_rows(x[0], 1, 3).unwrap();
        t.slice_cols(a, 1, 2).unwrap()
    });
    check_op(vec![rand_matrix(4, 2, 25)], 26, |t, x| {
        let g = t.gather_rows(x[0], Arc::new(vec![3, 0, 3, 1])).unwrap();
        t.scatter_add_rows(g, Arc::new(vec![0, 0, 2, 1]), 3).unwrap()
    });
    check_op(vec![rand_matrix(3, 3, 27)], 28, |t, x| {
        let s = t.sum(x[0]);
        t.scale(s, 2.0)
    });
}

#[test]
fn softmax_adjoints_with_mask() {
    check_op(vec![rand_matrix(3, 4, 29)], 30, |t, x| {
        t.softmax_rows(x[0], Some(&[true, false, true, true])).unwrap()
    });
}

#[test]
fn normalization_adjoints() {
    let gain = rand_matrix(1, 4, 31);
    let bias = rand_matrix(1, 4, 32);
    check_op(vec![rand_matrix(3, 4, 33), gain.clone(), bias.clone()], 34, |t, x| {
        t.layer_norm(x[0], x[1], x[2], 1e-6).unwrap()
    });
    check_op(vec![rand_matrix(5, 4, 35), gain.clone(), bias.clone()], 36, |t, x| {
        let mask = Arc::new(vec![true, true, false, true, true]);
        t.batch_norm_train(x[0], x[1], x[2], mask, 1e-6).unwrap().0
    });
    check_op(vec![rand_matrix(5, 4, 37), gain, bias], 38, |t, x| {
        t.batch_norm_infer(x[0], x[1], x[2], &[0.1, -0.2, 0.3, 0.0], &[1.0, 2.0, 0.5, 1.5], 1e-6)
            .unwrap()
    });
}

#[test]
fn softmax_examples() {
    let s = softmax_rows(&Matrix::<f64>::from_rows(&[&[0.0, 0.0]]), None).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5]);
    for (a, b) in [(3.0, -7.0), (-100.0, 100.0), (0.0, 0.0)] {
        let s = softmax_rows(&Matrix::<f64>::from_rows(&[&[a, b]]), Some(&[true, false])).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }
    let s = softmax_rows(&Matrix::<f64>::from_rows(&[&[1.0, 2.0, 3.0]]), None).unwrap();
    let z: f64 = [1f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
    for (j, x) in [1f64, 2.0, 3.0].iter().enumerate() {
        assert!((s[(0, j)] - x.exp() / z).abs() < 1e-15);
    }
}

#[test]
fn softmax_rejects_fully_masked_row() {
    let err = softmax_rows(&Matrix::<f64>::zeros(2, 2), Some(&[false, false])).unwrap_err();
    assert!(matches!(err, crate::Error::DegenerateRow { row: 0, .. }));
}

fn layer_norm_value(x: Matrix<f64>, eps: f64) -> Matrix<f64> {
    let cols = x.cols();
    let mut t = Tape::new();
    let x = t.constant(x);
    let g = t.constant(Matrix::filled(1, cols, 1.0));
    let b = t.constant(Matrix::zeros(1, cols));
    let y = t.layer_norm(x, g, b, eps).unwrap();
    t.value(y).clone()
}

#[test]
fn layer_norm_examples() {
    let y = layer_norm_value(Matrix::from_rows(&[&[4.0, 4.0, 4.0]]), 1e-6);
    assert!(y.data().iter().all(|&v| v == 0.0));
    let y = layer_norm_value(Matrix::from_rows(&[&[1.0, 3.0]]), 1e-12);
    assert!((y[(0, 0)] + 1.0).abs() < 1e-9 && (y[(0, 1)] - 1.0).abs() < 1e-9);
    let y = layer_norm_value(rand_matrix(1, 16, 40), 1e-12);
    let mean = y.sum() / 16.0;
    let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
    assert!(mean.abs() < 1e-6);
    assert!((var - 1.0).abs() < 1e-4);
}

fn bn_nodes(t: &mut Tape<f64>, x: Matrix<f64>) -> (NodeId, NodeId, NodeId) {
    let cols = x.cols();
    let x = t.constant(x);
    let g = t.constant(Matrix::filled(1, cols, 1.0));
    let b = t.constant(Matrix::zeros(1, cols));
    (x, g, b)
}

#[test]
fn batch_norm_constant_column_is_zero() {
    let mut t = Tape::new();
    let (x, g, b) = bn_nodes(&mut t, Matrix::from_rows(&[&[2.0], &[2.0], &[2.0]]));
    let mask = Arc::new(vec![true; 3]);
    let state = BatchNormState::default();
    let (y, _) = batch_norm(&mut t, x, g, b, Mode::Train, &state, mask, 0.1, 1e-5).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_norm_infer_needs_state_and_is_deterministic() {
    let input = rand_matrix(4, 3, 41);
    let mask = Arc::new(vec![true; 4]);
    let mut t = Tape::new();
    let (x, g, b) = bn_nodes(&mut t, input.clone());
    let empty = BatchNormState::default();
    let err = batch_norm(&mut t, x, g, b, Mode::Infer, &empty, mask.clone(), 0.1, 1e-5).unwrap_err();
    assert!(matches!(err, crate::Error::UninitializedStats(_)));

    let state = BatchNormState {
        mean: Some(vec![0.1, 0.2, 0.3]),
        var: Some(vec![1.0, 2.0, 3.0]),
    };
    let run = || {
        let mut t = Tape::new();
        let (x, g, b) = bn_nodes(&mut t, input.clone());
        let (y, next) = batch_norm(&mut t, x, g, b, Mode::Infer, &state, mask.clone(), 0.1, 1e-5).unwrap();
        assert!(next.is_none());
        t.value(y).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn batch_norm_full_momentum_tracks_batch_stats() {
    let input = Matrix::<f64>::from_rows(&[&[1.0, 10.0], &[3.0, 20.0], &[5.0, 60.0]]);
    let mask = Arc::new(vec![true; 3]);
    let mut state = BatchNormState::default();
    for _ in 0..2 {
        let mut t = Tape::new();
        let (x, g, b) = bn_nodes(&mut t, input.clone());
        let (_, next) = batch_norm(&mut t, x, g, b, Mode::Train, &state, mask.clone(), 1.0, 1e-5).unwrap();
        state = next.unwrap();
    }
    // direct population statistics
    let mean = [3.0, 30.0];
    let var = [8.0 / 3.0, (400.0 + 100.0 + 900.0) / 3.0];
    for c in 0..2 {
        assert!((state.mean.as_ref().unwrap()[c] - mean[c]).abs() < 1e-12);
        assert!((state.var.as_ref().unwrap()[c] - var[c]).abs() < 1e-9);
    }
}

#[test]
fn relu_example() {
    let mut t = Tape::new();
    let x = t.constant(Matrix::<f64>::from_rows(&[&[-1.0, 2.0]]));
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0, 2.0]);
}

#[test]
fn dropout_rate_zero_and_infer_are_identity() {
    let input = rand_matrix(5, 7, 42);
    for (rate, mode) in [(0.0, Mode::Train), (0.5, Mode::Infer), (0.0, Mode::Infer)] {
        let mut t = Tape::new();
        let x = t.constant(input.clone());
        let y = dropout(&mut t, x, rate, mode, SeedPath::new(1)).unwrap();
        assert_eq!(t.value(y), &input);
    }
    let mut t = Tape::new();
    let x = t.constant(input);
    assert!(dropout(&mut t, x, 1.0, Mode::Train, SeedPath::new(1)).is_err());
}

#[test]
fn dropout_preserves_mean_in_expectation() {
    let n = 100_000;
    let input = Matrix::<f64>::uniform(1, n, 1.0, &mut SeedPath::new(43).rng()).map(|v| v + 2.0);
    let raw_mean = input.sum() / n as f64;
    let mut t = Tape::new();
    let x = t.constant(input);
    let y = dropout(&mut t, x, 0.5, Mode::Train, SeedPath::new(44)).unwrap();
    let out = t.value(y);
    let zeros = out.data().iter().filter(|&&v| v == 0.0).count();
    assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.01);
    let mean = out.sum() / n as f64;
    assert!((mean / raw_mean - 1.0).abs() < 0.02, "{mean} vs {raw_mean}");

    // same seed, same mask
    let mut t2 = Tape::new();
    let x2 = t2.constant(Matrix::filled(1, 10, 1.0));
    let a = dropout(&mut t2, x2, 0.3, Mode::Train, SeedPath::new(5)).unwrap();
    let b = dropout(&mut t2, x2, 0.3, Mode::Train, SeedPath::new(5)).unwrap();
    assert_eq!(t2.value(a), t2.value(b));
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::<f64>::new();
    store.insert("x", rand_matrix(2, 3, 45));
    store.insert("unused", rand_matrix(2, 2, 46));
    let mut t = Tape::new();
    let x = t.param(&store, "x").unwrap();
    let s = t.sum(x);
    t.backward(s, &mut store).unwrap();
    assert!(store.grad("x").unwrap().data().iter().all(|&g| g == 1.0));
    assert!(store.grad("unused").unwrap().data().iter().all(|&g| g == 0.0));

    let mut t = Tape::new();
    let _x = t.param(&store, "x").unwrap();
    let c = t.constant(Matrix::filled(1, 1, 3.0));
    store.zero_grads();
    t.backward(c, &mut store).unwrap();
    assert!(store.grad("x").unwrap().data().iter().all(|&g| g == 0.0));

    let mut t = Tape::new();
    let x = t.param(&store, "x").unwrap();
    assert!(matches!(
        t.backward(x, &mut store),
        Err(crate::Error::NonScalarOutput { rows: 2, cols: 3 })
    ));
}

#[test]
fn backward_visits_each_node_once() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(rand_matrix(2, 2, 47));
    let b = t.add(a, a).unwrap();
    let c = t.matmul(b, a).unwrap();
    let _dangling = t.relu(a);
    let s = t.sum(c);
    let grads = t.gradients(s).unwrap();
    // a, b, c, s reachable; the dangling relu is not
    assert_eq!(grads.visited(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(
        values in proptest::collection::vec(-30.0f64..30.0, 12),
        mask in proptest::collection::vec(any::<bool>(), 4),
    ) {
        let mut mask = mask;
        mask[0] = true;
        let x = Matrix::from_vec(3, 4, values).unwrap();
        let s = softmax_rows(&x, Some(&mask)).unwrap();
        for r in 0..3 {
            let total: f64 = s.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            for (j, &m) in mask.iter().enumerate() {
                if !m { prop_assert_eq!(s[(r, j)], 0.0); }
            }
        }
    }

    #[test]
    fn forward_ops_are_finite(values in proptest::collection::vec(-2.0f64..2.0, 12)) {
        let x = Matrix::from_vec(4, 3, values).unwrap();
        let mut t = Tape::new();
        let xi = t.constant(x);
        let g = t.constant(Matrix::filled(1, 3, 1.0));
        let b = t.constant(Matrix::zeros(1, 3));
        let ln = t.layer_norm(xi, g, b, 1e-6).unwrap();
        let (bn, _) = t.batch_norm_train(ln, g, b, Arc::new(vec![true; 4]), 1e-6).unwrap();
        let sm = t.softmax_rows(bn, None).unwrap();
        prop_assert!(t.value(sm).is_finite());
    }
}
