//! Dense tensors, forward kernels and a recording graph for reverse-mode gradients.

mod graph;
mod kernels;
mod scalar;
mod tensor;

pub use graph::{backward, AttentionMask, Gradients, Graph, NodeId, RowSource};
pub use kernels::{layer_norm, masked_softmax, matmul, sigmoid, BoolMatrix, LAYER_NORM_EPS};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_of_product_gradient_is_input() {
        let mut g = Graph::new();
        let w = g.param(Tensor::from_rows(&[[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]]).unwrap());
        let x = g.constant(Tensor::from_rows(&[[0.25], [-1.5], [2.0]]).unwrap());
        let unused = g.param(Tensor::full(&[2, 2], 7.0));
        let y = g.matmul(w, x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        let gw = grads.wrt(w);
        for i in 0..2 {
            assert_eq!(gw.row(i), &[0.25, -1.5, 2.0]);
        }
        assert!(grads.get(unused).is_none());
        assert!(grads.wrt(unused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::zeros(&[2, 2]));
        let err = g.backward(w).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn ops_do_not_modify_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        let (a0, b0) = (a.clone(), b.clone());
        matmul(&a, &b).unwrap();
        layer_norm(&a, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5).unwrap();
        masked_softmax(&a, &BoolMatrix::all(3, 4)).unwrap();
        assert_eq!((a, b), (a0, b0));
    }

    #[test]
    fn nodes_are_topologically_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let x = g.param(random(&mut rng, &[2, 3]));
        let w = g.param(random(&mut rng, &[3, 3]));
        let h = g.matmul(x, w).unwrap();
        let r = g.relu(h);
        let s = g.add(r, h).unwrap();
        let _ = g.mean(s);
        for k in 0..g.len() {
            for input in g.inputs(NodeId::for_test(k)) {
                assert!(input.index() < k);
            }
        }
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 4;
        let causal = BoolMatrix::from_fn(n, n, |i, j| j <= i);
        let mask = Arc::new(AttentionMask::new(&[causal], vec![false; n]).unwrap());
        let mut g = Graph::new();
        let q = g.constant(random(&mut rng, &[n, 4]));
        let k = g.constant(random(&mut rng, &[n, 4]));
        // One-hot values expose the attention weights directly.
        let v = g.constant(Tensor::identity(n));
        let out = g.attention(q, k, v, 1, mask).unwrap();
        let w = g.value(out);
        for i in 0..n {
            let row = w.row(i);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[i + 1..].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn fully_masked_attention_row_needs_pad_flag() {
        let mask = BoolMatrix::from_fn(2, 2, |i, j| i == 1 && j == 1);
        let strict = Arc::new(AttentionMask::new(std::slice::from_ref(&mask), vec![false, false]).unwrap());
        let lenient = Arc::new(AttentionMask::new(&[mask], vec![true, false]).unwrap());
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 2], 0.5));
        assert!(matches!(
            g.attention(x, x, x, 1, strict),
            Err(crate::Error::InvalidMask { row: 0 })
        ));
        let out = g.attention(x, x, x, 1, lenient).unwrap();
        assert_eq!(g.value(out).row(0), &[0.0, 0.0]);
    }

    #[test]
    fn gather_checks_range() {
        let mut g = Graph::<f32>::new();
        let table = g.param(Tensor::zeros(&[3, 2]));
        let err = g.gather(table, vec![0, 3], "emb").unwrap_err();
        assert!(matches!(err, crate::Error::Lookup { index: 3, rows: 3, .. }));
    }
}
