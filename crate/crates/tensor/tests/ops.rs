use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semocc_tensor::gradcheck::check;
use semocc_tensor::{Graph, Result, Tensor, TensorError, Var};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Weighted sum so every output element affects the loss differently.
fn weighted(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::uniform(g.shape(v), 1.0, &mut rng);
    let w = g.constant(&w);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let a = g.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = g.constant(&t(&[2, 1], &[3.0, 4.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &[3.0, 4.0]);
    assert_eq!(g.shape(c), &[2, 1]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let a = g.constant(&t(&[2], &[0.0, 0.0]));
    let s = g.softmax(a, 0).unwrap();
    assert_eq!(g.value(s), &[0.5, 0.5]);
}

#[test]
fn scatter_add_sums_collisions() {
    let mut g = Graph::new();
    let a = g.constant(&t(&[3], &[1.0, 2.0, 5.0]));
    let s = g.scatter_add(a, 0, &[0, 0, 1], 2).unwrap();
    assert_eq!(g.value(s), &[3.0, 5.0]);
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(&Tensor::zeros(&[2, 3]));
    let b = g.constant(&Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    match err {
        TensorError::ShapeMismatch { lhs, rhs, .. } => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    let c = g.constant(&Tensor::zeros(&[3]));
    let msg = g.add(a, c).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[3]"), "{msg}");
}

#[test]
fn square_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::scalar(3.0).with_grad());
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[6.0]);
}

#[test]
fn sum_of_softmax_has_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(&t(&[4], &[0.3, -1.0, 2.0, 0.1]).with_grad());
    let s = g.softmax(x, 0).unwrap();
    let l = g.sum(s);
    let grads = g.backward(l).unwrap();
    for v in grads.get(x).unwrap() {
        assert!(v.abs() < 1e-15);
    }
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::ones(&[2]).with_grad());
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::ones(&[2]).with_grad());
    let unused = g.leaf(&Tensor::ones(&[3]).with_grad());
    let l = g.sum(x);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(unused).unwrap(), &[0.0; 3]);
}

#[test]
fn random_five_op_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let inputs = vec![rand_t(&mut rng, &[3, 4]), rand_t(&mut rng, &[4, 2])];
        let report = check(&inputs, 1e-5, |g, v| {
            let m = g.matmul(v[0], v[1])?;
            let s = g.sigmoid(m);
            let e = g.exp(s);
            let sm = g.softmax(e, 1)?;
            weighted(g, sm, trial)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }
}

#[test]
fn conv2d_stride_two_halves_extent() {
    let mut g = Graph::new();
    let x = g.constant(&Tensor::ones(&[1, 5, 6]));
    let w = g.constant(&Tensor::ones(&[2, 1, 3, 3]));
    let b = g.constant(&Tensor::zeros(&[2]));
    let y = g.conv2d(x, w, b, 2).unwrap();
    assert_eq!(g.shape(y), &[2, 3, 3]);
    // Interior output samples the full 3x3 window; the corner only 2x2.
    assert_eq!(g.value(y)[0], 4.0);
    assert_eq!(g.value(y)[4], 9.0);
}

#[test]
fn selective_scan_limits() {
    let mut g = Graph::new();
    let x = g.constant(&t(&[4, 1], &[1.0, 2.0, 3.0, 4.0]));
    let ones = g.constant(&Tensor::ones(&[4, 1]));
    let zeros = g.constant(&Tensor::zeros(&[4, 1]));
    let prefix = g.selective_scan(x, ones, ones, ones).unwrap();
    assert_eq!(g.value(prefix), &[1.0, 3.0, 6.0, 10.0]);
    let half = g.constant(&Tensor::full(&[4, 1], 0.5));
    let memoryless = g.selective_scan(x, zeros, half, ones).unwrap();
    assert_eq!(g.value(memoryless), &[0.5, 1.0, 1.5, 2.0]);
}

#[test]
fn conv_delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_t(&mut rng, &[2, 5, 4, 3]);
    let mut w = Tensor::zeros(&[2, 2, 3, 3, 3]);
    for c in 0..2 {
        let off = w.offset(&[c, c, 1, 1, 1]);
        w.data_mut()[off] = 1.0;
    }
    let mut g = Graph::new();
    let xv = g.constant(&x);
    let wv = g.constant(&w);
    let b = g.constant(&Tensor::zeros(&[2]));
    let y = g.conv3d(xv, wv, b).unwrap();
    assert_eq!(g.value(y), x.data());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let a = g.constant(&t(&[3, 4], &vals));
        for axis in 0..2 {
            let s = g.softmax(a, axis).unwrap();
            let sums = g.sum_axis(s, axis).unwrap();
            for v in g.value(sums) {
                prop_assert!((v - 1.0).abs() <= 1e-12);
            }
            prop_assert!(g.value(s).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn scatter_add_conserves_mass(
        vals in prop::collection::vec(-5.0f64..5.0, 1..40),
        seed in any::<u64>(),
        size in 1usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..vals.len()).map(|_| rng.gen_range(0..size)).collect();
        let mut g = Graph::new();
        let a = g.constant(&t(&[vals.len()], &vals));
        let s = g.scatter_add(a, 0, &idx, size).unwrap();
        let total: f64 = g.value(s).iter().sum();
        let expect: f64 = vals.iter().sum();
        prop_assert!((total - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
    }

    #[test]
    fn conv2d_delta_kernel_reproduces_interior(vals in prop::collection::vec(-1.0f64..1.0, 30)) {
        let x = t(&[1, 5, 6], &vals);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let wv = g.constant(&w);
        let b = g.constant(&Tensor::zeros(&[1]));
        let y = g.conv2d(xv, wv, b, 1).unwrap();
        for i in 1..4 {
            for j in 1..5 {
                prop_assert_eq!(g.value(y)[i * 6 + j], x.at(&[0, i, j]));
            }
        }
    }
}
