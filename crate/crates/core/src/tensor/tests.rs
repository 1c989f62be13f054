use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use super::graph::softmax_rows;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Projects `out` onto a fixed random direction so every output entry
/// contributes to the scalar loss.
fn project(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(out).shape().to_vec();
    let dir = g.constant(random(&mut rng, &shape)).unwrap();
    let prod = g.mul(out, dir).unwrap();
    g.sum(prod).unwrap()
}

/// Gradient-checks `build` applied to freshly drawn parameters of `shapes`.
fn check_op<F>(shapes: &[Vec<usize>], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, s) in shapes.iter().enumerate() {
        store.add(format!("p{i}"), random(&mut rng, s));
    }
    let eval = |store: &ParamStore<f64>| -> (f64, GradStore<f64>) {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = store.ids().map(|id| g.param(id)).collect();
        let out = build(&mut g, &vars);
        let loss = project(&mut g, out, seed ^ 0x5eed);
        (g.scalar(loss), g.backward(loss).unwrap())
    };
    grad_check(&mut store, |s| Ok(eval(s).0), |s| Ok(eval(s).1), 1e-5).unwrap()
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::vector(vec![0.0; 3])).unwrap();
    let y = g.softmax(x).unwrap();
    for &p in g.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn relu_clamps_negatives() {
    let store = ParamStore::<f32>::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0])).unwrap();
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn identity_matmul_on_graph() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let a = g.constant(Tensor::from_rows(&[&[1., 2.], &[3., 4.]]).unwrap()).unwrap();
    let i = g.constant(Tensor::from_rows(&[&[1., 0.], &[0., 1.]]).unwrap()).unwrap();
    let y = g.matmul(a, i).unwrap();
    assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    let c = g.constant(Tensor::zeros(&[3, 2])).unwrap();
    assert!(matches!(g.add(a, c), Err(TensorError::Dimension { .. })));
}

#[test]
fn non_finite_output_is_an_error() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
    assert!(matches!(g.log(x), Err(TensorError::Numeric { .. })));
    let big = g.constant(Tensor::vector(vec![f64::MAX])).unwrap();
    assert!(matches!(g.scale(big, 10.0), Err(TensorError::Numeric { .. })));
}

#[test]
fn derivative_of_square() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::scalar(3.0f64));
    let mut g = Graph::new(&store);
    let x = g.param(id);
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(id).data(), &[6.0]);
}

#[test]
fn relu_subgradient() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::vector(vec![-1.0f64, 2.0]));
    let mut g = Graph::new(&store);
    let x = g.param(id);
    let r = g.relu(x).unwrap();
    let s = g.sum(r).unwrap();
    assert_eq!(g.backward(s).unwrap().get(id).data(), &[0.0, 1.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::vector(vec![1.0f64, 2.0]));
    let mut g = Graph::new(&store);
    let x = g.param(id);
    assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));
}

#[test]
fn unreachable_parameter_gets_zero_gradient() {
    let mut store = ParamStore::new();
    let used = store.add("used", Tensor::vector(vec![1.0f64, 2.0]));
    let unused = store.add("unused", Tensor::vector(vec![5.0f64; 4]));
    let mut g = Graph::new(&store);
    let x = g.param(used);
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(unused).shape(), &[4]);
    assert!(grads.get(unused).data().iter().all(|&v| v == 0.0));
}

#[test]
fn quadratic_gradcheck_is_exact() {
    let mut store = ParamStore::new();
    store.add("x", Tensor::vector(vec![0.3f64, -1.2, 2.0]));
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let x = g.param(s.id("x").unwrap());
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq).unwrap();
        (g.scalar(l), g.backward(l).unwrap())
    };
    let err = grad_check(&mut store, |s| Ok(eval(s).0), |s| Ok(eval(s).1), 1e-5).unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn backward_is_linear_over_subgraphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&mut rng, &[3, 4]));
    let x = random(&mut rng, &[2, 3]);
    let branch = |g: &mut Graph<'_, f64>, which: u8| -> Var {
        let wv = g.param(w);
        let xv = g.constant(x.clone()).unwrap();
        let h = g.matmul(xv, wv).unwrap();
        let out = if which == 0 { g.tanh(h).unwrap() } else { g.sigmoid(h).unwrap() };
        g.sum(out).unwrap()
    };
    let separate: Vec<_> = (0..2)
        .map(|k| {
            let mut g = Graph::new(&store);
            let l = branch(&mut g, k);
            g.backward(l).unwrap()
        })
        .collect();
    let mut g = Graph::new(&store);
    let a = branch(&mut g, 0);
    let b = branch(&mut g, 1);
    let total = g.add(a, b).unwrap();
    let joint = g.backward(total).unwrap();
    for k in 0..12 {
        let sum = separate[0].get(w).data()[k] + separate[1].get(w).data()[k];
        assert!((joint.get(w).data()[k] - sum).abs() < 1e-12);
    }
}

#[test]
fn corrupted_rule_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    store.add("a", random(&mut rng, &[3, 4]));
    store.add("b", random(&mut rng, &[4, 2]));
    let eval = |s: &ParamStore<f64>, faulty: bool| {
        let mut g = Graph::new(s);
        if faulty {
            g.inject_backward_fault(OpKind::MatMul, 1.1);
        }
        let a = g.param(ParamId(0));
        let b = g.param(ParamId(1));
        let p = g.matmul(a, b).unwrap();
        let p = g.scale(p, 10.0).unwrap();
        let l = g.sum(p).unwrap();
        (g.scalar(l), g.backward(l).unwrap())
    };
    let good = grad_check(&mut store, |s| Ok(eval(s, false).0), |s| Ok(eval(s, false).1), 1e-5)
        .unwrap();
    let bad =
        grad_check(&mut store, |s| Ok(eval(s, false).0), |s| Ok(eval(s, true).1), 1e-5).unwrap();
    assert!(good < 1e-8, "{good}");
    assert!(bad > 1e-2, "{bad}");
}

#[test]
fn cross_entropy_of_uniform_scores() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros(&[2, 4])).unwrap();
    let l = g.softmax_cross_entropy(x, &[0, 3], &[None, Some(1)]).unwrap();
    let expected = 4f64.ln() + 3f64.ln();
    assert!((g.scalar(l) - expected).abs() < 1e-12);
    assert!(g.softmax_cross_entropy(x, &[1, 1], &[Some(1), None]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_and_matrix_ops_match_finite_differences(
        m in 1usize..=8, k in 1usize..=8, n in 1usize..=8, seed in 0u64..1000
    ) {
        let tol = 1e-4;
        let checks: Vec<(&str, f64)> = vec![
            ("matmul", check_op(&[vec![m, k], vec![k, n]], seed, |g, v| g.matmul(v[0], v[1]).unwrap())),
            ("matmul_t", check_op(&[vec![m, k], vec![n, k]], seed, |g, v| g.matmul_t(v[0], v[1]).unwrap())),
            ("transpose", check_op(&[vec![m, k]], seed, |g, v| g.transpose(v[0]).unwrap())),
            ("add", check_op(&[vec![m, k], vec![m, k]], seed, |g, v| g.add(v[0], v[1]).unwrap())),
            ("sub", check_op(&[vec![m, k], vec![m, k]], seed, |g, v| g.sub(v[0], v[1]).unwrap())),
            ("mul", check_op(&[vec![m, k], vec![m, k]], seed, |g, v| g.mul(v[0], v[1]).unwrap())),
            ("add_bias", check_op(&[vec![m, k], vec![k]], seed, |g, v| g.add_bias(v[0], v[1]).unwrap())),
            ("affine", check_op(&[vec![m, k]], seed, |g, v| g.affine(v[0], -1.5, 0.5).unwrap())),
            ("concat_cols", check_op(&[vec![m, k], vec![m, n]], seed, |g, v| g.concat_cols(&[v[0], v[1]]).unwrap())),
            ("concat_rows", check_op(&[vec![m, k], vec![n, k]], seed, |g, v| g.concat_rows(&[v[0], v[1]]).unwrap())),
            ("slice_cols", check_op(&[vec![m, k]], seed, |g, v| g.slice_cols(v[0], k / 2, k - k / 2).unwrap())),
            ("slice_rows", check_op(&[vec![m, k]], seed, |g, v| g.slice_rows(v[0], m / 2, m - m / 2).unwrap())),
            ("gather_rows", check_op(&[vec![m, k]], seed, |g, v| {
                g.gather_rows(v[0], &[Some(m - 1), None, Some(0), Some(m - 1)]).unwrap()
            })),
            ("sigmoid", check_op(&[vec![m, k]], seed, |g, v| g.sigmoid(v[0]).unwrap())),
            ("tanh", check_op(&[vec![m, k]], seed, |g, v| g.tanh(v[0]).unwrap())),
            ("relu", check_op(&[vec![m, k]], seed, |g, v| g.relu(v[0]).unwrap())),
            ("softmax", check_op(&[vec![m, k]], seed, |g, v| g.softmax(v[0]).unwrap())),
            ("log", check_op(&[vec![m, k]], seed, |g, v| {
                let s = g.sigmoid(v[0]).unwrap();
                g.log(s).unwrap()
            })),
            ("mean", check_op(&[vec![m, k]], seed, |g, v| g.mean(v[0]).unwrap())),
            ("bilinear", check_op(&[vec![m, k], vec![n, k, 3], vec![m, 3]], seed, |g, v| {
                g.bilinear(v[0], v[1], v[2]).unwrap()
            })),
            ("cross_entropy", check_op(&[vec![m, k + 1]], seed, |g, v| {
                let targets: Vec<usize> = (0..m).map(|i| (i * 7) % (k + 1)).collect();
                let excluded: Vec<Option<usize>> = targets
                    .iter()
                    .map(|&t| if k > 0 { Some((t + 1) % (k + 1)) } else { None })
                    .collect();
                g.softmax_cross_entropy(v[0], &targets, &excluded).unwrap()
            })),
        ];
        for (name, err) in checks {
            prop_assert!(err < tol, "{} rel. error {}", name, err);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[rows, cols]).map(|v| v * 30.0);
        let y = softmax_rows(&x.cast::<f32>());
        for r in 0..rows {
            let row = y.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            let s: f64 = row.iter().map(|&p| p as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
