use std::sync::Arc;

use das_core::numerics::{layer_norm, masked_softmax, matmul, AttentionMask, BoolMatrix, Graph, NodeId, RowSource, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for t in 0..k {
                c[i * n + j] += a[i * k + t] * b[t * n + j];
            }
        }
    }
    c
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop((a, b) in (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))) {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let c = matmul(&a, &b).unwrap();
        let want = naive_matmul(a.data(), b.data(), m, k, n);
        for (x, y) in c.data().iter().zip(&want) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(
        scores in matrix(4, 4),
        bits in prop::collection::vec(any::<bool>(), 16),
    ) {
        let mut allow = bits.clone();
        for i in 0..4 {
            allow[i * 4 + i] = true;
        }
        let mask = BoolMatrix::new(4, 4, allow.clone()).unwrap();
        let p = masked_softmax(&scores, &mask).unwrap();
        prop_assert!(p.is_finite());
        for i in 0..4 {
            let row = p.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..4 {
                prop_assert!(row[j] >= 0.0);
                if !allow[i * 4 + j] {
                    prop_assert_eq!(row[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn layer_norm_ignores_shifts(x in matrix(3, 5), shift in -50.0..50.0f64) {
        let ones = Tensor::full(&[5], 1.0);
        let zeros = Tensor::zeros(&[5]);
        let a = layer_norm(&x, &ones, &zeros, 1e-5).unwrap();
        let b = layer_norm(&x.map(|v| v + shift), &ones, &zeros, 1e-5).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central-difference check of every input of a scalar function built by `build`.
fn check(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId) {
    let eval = |inputs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids);
    let grads = g.backward(out).unwrap();
    let h = 1e-5;
    for (n, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id);
        for k in 0..inputs[n].len() {
            let mut up = inputs.clone();
            up[n].data_mut()[k] += h;
            let mut down = inputs.clone();
            down[n].data_mut()[k] -= h;
            let numeric = (eval(&up) - eval(&down)) / (2.0 * h);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "input {n} element {k}: analytic {a} numeric {numeric}");
        }
    }
}

fn weighted_sum(g: &mut Graph<f64>, x: NodeId, seed: u64) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(x).shape().to_vec();
    let w = g.constant(random(&mut rng, &shape));
    let y = g.mul(x, w).unwrap();
    g.sum(y)
}

#[test]
fn matmul_and_bias_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check(vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2]), random(&mut rng, &[2])], |g, x| {
        let y = g.matmul(x[0], x[1]).unwrap();
        let y = g.add_row(y, x[2]).unwrap();
        weighted_sum(g, y, 9)
    });
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    check(vec![random(&mut rng, &[3, 5]), random(&mut rng, &[5]), random(&mut rng, &[5])], |g, x| {
        let y = g.layer_norm(x[0], x[1], x[2], 1e-5).unwrap();
        weighted_sum(g, y, 3)
    });
}

#[test]
fn masked_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mask = BoolMatrix::new(3, 3, vec![true, false, false, true, true, false, false, true, true]).unwrap();
    check(vec![random(&mut rng, &[3, 3])], move |g, x| {
        let y = g.masked_softmax(x[0], &mask).unwrap();
        weighted_sum(g, y, 4)
    });
}

#[test]
fn batched_attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pads = [true, false, false, false, false, false];
    let masks: Vec<BoolMatrix> = pads
        .chunks(3)
        .map(|p| BoolMatrix::from_fn(3, 3, |i, j| j <= i && !p[j]))
        .collect();
    let mask = Arc::new(AttentionMask::new(&masks, pads.to_vec()).unwrap());
    check(
        vec![random(&mut rng, &[6, 4]), random(&mut rng, &[6, 4]), random(&mut rng, &[6, 4])],
        move |g, x| {
            let y = g.attention(x[0], x[1], x[2], 2, mask.clone()).unwrap();
            weighted_sum(g, y, 5)
        },
    );
}

#[test]
fn lookup_and_composition_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check(vec![random(&mut rng, &[4, 3]), random(&mut rng, &[1, 3])], |g, x| {
        let e = g.gather(x[0], vec![3, 1, 1, 0], "t").unwrap();
        let plan = vec![RowSource::Row(0), RowSource::Start, RowSource::Row(1), RowSource::Row(2)];
        let c = g.compose_rows(e, x[1], plan).unwrap();
        let s = g.select_rows(c, vec![3, 1]).unwrap();
        let r = g.relu(s);
        let sg = g.sigmoid(c);
        let a = weighted_sum(g, r, 6);
        let b = weighted_sum(g, sg, 7);
        g.add(a, b).unwrap()
    });
}

#[test]
fn bce_and_mean_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check(vec![random(&mut rng, &[5, 1]), random(&mut rng, &[2, 2])], |g, x| {
        let l = g.bce_with_logits(x[0], vec![1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let m = g.mean(x[1]);
        let m = g.scale(m, 0.3);
        g.add(l, m).unwrap()
    });
}

#[test]
fn pad_query_rows_produce_zero_output() {
    let mut g = Graph::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = g.constant(random(&mut rng, &[3, 4]));
    let mask = BoolMatrix::from_fn(3, 3, |i, j| j <= i && j != 0);
    let mask = Arc::new(AttentionMask::new(&[mask], vec![true, false, false]).unwrap());
    let y = g.attention(q, q, q, 2, mask).unwrap();
    assert!(g.value(y).row(0).iter().all(|&v| v == 0.0));
    assert!(g.value(y).row(1).iter().any(|&v| v != 0.0));
}

#[test]
fn fully_masked_real_row_is_rejected() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(Tensor::zeros(&[2, 2]));
    let mask = BoolMatrix::from_fn(2, 2, |i, _| i == 1);
    let mask = Arc::new(AttentionMask::new(&[mask], vec![false, false]).unwrap());
    assert!(matches!(g.attention(q, q, q, 1, mask), Err(das_core::Error::InvalidMask { row: 0 })));
}
