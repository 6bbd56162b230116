use numcore::gradcheck::check_inputs;
use numcore::{NdArray, NumError, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;

fn rand_array(shape: &[usize], seed: u64) -> NdArray<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NdArray::randn(shape.to_vec(), 1.0, &mut rng)
}

#[test]
fn matmul_examples() {
    let tape = Tape::<f64>::new();
    let eye = tape.leaf(NdArray::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let col = tape.leaf(NdArray::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
    assert_eq!(eye.matmul(&col).unwrap().to_vec(), vec![3.0, 4.0]);
    let row = tape.leaf(NdArray::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
    let out = row.matmul(&col).unwrap();
    assert_eq!(out.shape(), vec![1, 1]);
    assert_eq!(out.item(), 11.0);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::<f64>::new();
    let a = tape.leaf(NdArray::zeros(vec![2, 3]));
    let b = tape.leaf(NdArray::zeros(vec![2, 3]));
    match a.matmul(&b).unwrap_err() {
        NumError::Shape { lhs, rhs, .. } => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        e => panic!("unexpected {e}"),
    }
    let msg = a.matmul(&b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]"));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let inputs = [rand_array(&[3, 4], seed), rand_array(&[4, 2], seed + 100)];
        let reports = check_inputs(&inputs, |_, v| Ok(v[0].matmul(&v[1])?.sum()), H, None).unwrap();
        for r in reports {
            assert!(r.rel_err < 1e-4, "{r:?}");
        }
    }
}

#[test]
fn transposed_and_batched_matmul_gradients() {
    for seed in 0..10 {
        let inputs = [rand_array(&[4, 3], seed), rand_array(&[2, 4], seed + 50)];
        let w = rand_array(&[3, 2], seed + 99);
        let reports = check_inputs(
            &inputs,
            |t, v| {
                let c = v[0].matmul_t(&v[1], true, true)?;
                let w = t.constant(w.clone());
                Ok(c.mul(&w)?.sum())
            },
            H,
            None,
        )
        .unwrap();
        assert!(reports.iter().all(|r| r.rel_err < 1e-4), "{reports:?}");

        let inputs = [rand_array(&[2, 3, 4], seed), rand_array(&[2, 5, 4], seed + 7)];
        let w = rand_array(&[2, 3, 5], seed + 8);
        let reports = check_inputs(
            &inputs,
            |t, v| {
                let c = v[0].bmm(&v[1], false, true)?;
                Ok(c.mul(&t.constant(w.clone()))?.sum())
            },
            H,
            None,
        )
        .unwrap();
        assert!(reports.iter().all(|r| r.rel_err < 1e-4), "{reports:?}");
    }
}

#[test]
fn softmax_examples() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(NdArray::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    assert_eq!(x.softmax_rows().to_vec(), vec![0.5, 0.5]);
    let big = tape.leaf(NdArray::new(vec![1, 2], vec![1000.0, 1000.0]).unwrap());
    assert_eq!(big.softmax_rows().to_vec(), vec![0.5, 0.5]);
    let t32 = Tape::<f32>::new();
    let big = t32.leaf(NdArray::new(vec![1, 2], vec![1000.0f32, 1000.0]).unwrap());
    assert_eq!(big.softmax_rows().to_vec(), vec![0.5f32, 0.5]);
}

#[test]
fn softmax_gradient() {
    for seed in 0..10 {
        let w = rand_array(&[2, 5], seed + 1000);
        let reports = check_inputs(
            &[rand_array(&[2, 5], seed)],
            |t, v| Ok(v[0].softmax_rows().mul(&t.constant(w.clone()))?.sum()),
            H,
            None,
        )
        .unwrap();
        assert!(reports[0].rel_err < 1e-4, "{reports:?}");
    }
}

fn lse_oracle(row: &[f64], target: usize) -> f64 {
    // independent log-sum-exp evaluation
    let m = row.iter().cloned().fold(f64::MIN, f64::max);
    let s: f64 = row.iter().map(|x| (x - m).exp()).sum();
    m + s.ln() - row[target]
}

#[test]
fn cross_entropy_examples() {
    let tape = Tape::<f64>::new();
    let logits = tape.leaf(NdArray::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let ce = logits.cross_entropy(&[0], -100).unwrap();
    assert!((ce.loss.item() - 2f64.ln()).abs() < 1e-12);
    assert!(!ce.is_empty());

    let ce = logits.cross_entropy(&[-100], -100).unwrap();
    assert_eq!(ce.loss.item(), 0.0);
    assert!(ce.is_empty());

    assert!(matches!(
        logits.cross_entropy(&[2], -100).unwrap_err(),
        NumError::Index { index: 2, .. }
    ));
}

#[test]
fn cross_entropy_matches_log_sum_exp_oracle() {
    for seed in 0..10 {
        let logits = rand_array(&[4, 7], seed);
        let targets = [3i64, -100, 0, 6];
        let tape = Tape::<f64>::new();
        let got = tape.leaf(logits.clone()).cross_entropy(&targets, -100).unwrap();
        let want = [0usize, 2, 3]
            .iter()
            .map(|&r| lse_oracle(logits.row(r), targets[r] as usize))
            .sum::<f64>()
            / 3.0;
        assert!((got.loss.item() - want).abs() < 1e-6);
        assert_eq!(got.contributing, 3);
        let reports = check_inputs(
            &[logits],
            |_, v| Ok(v[0].cross_entropy(&targets, -100)?.loss),
            H,
            None,
        )
        .unwrap();
        assert!(reports[0].rel_err < 1e-4, "{reports:?}");
    }
}

#[test]
fn layer_norm_gelu_embedding() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(NdArray::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let g = tape.leaf(NdArray::full(vec![3], 1.0));
    let b = tape.leaf(NdArray::zeros(vec![3]));
    let y = x.layer_norm(&g, &b).unwrap().to_vec();
    assert!(y.iter().sum::<f64>().abs() / 3.0 < 1e-6);
    let var = y.iter().map(|v| v * v).sum::<f64>() / 3.0;
    assert!((var - 1.0).abs() < 1e-4);

    let z = tape.leaf(NdArray::new(vec![3], vec![0.0, 1.0, -1.0]).unwrap()).gelu().to_vec();
    assert_eq!(z[0], 0.0);
    assert!((z[1] - 0.841_192).abs() < 1e-5);

    let table = tape.leaf(NdArray::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    assert_eq!(table.embedding(&[2, 0]).unwrap().to_vec(), vec![4.0, 5.0, 0.0, 1.0]);
    assert!(matches!(
        table.embedding(&[3]).unwrap_err(),
        NumError::Index { index: 3, .. }
    ));
}

#[test]
fn layer_norm_gelu_embedding_gradients() {
    for seed in 0..10 {
        let w = rand_array(&[3, 4], seed + 500);
        let inputs = [
            rand_array(&[3, 4], seed),
            rand_array(&[4], seed + 1),
            rand_array(&[4], seed + 2),
        ];
        let reports = check_inputs(
            &inputs,
            |t, v| Ok(v[0].layer_norm(&v[1], &v[2])?.mul(&t.constant(w.clone()))?.sum()),
            H,
            None,
        )
        .unwrap();
        assert!(reports.iter().all(|r| r.rel_err < 1e-4), "{reports:?}");

        let reports = check_inputs(
            &[rand_array(&[3, 4], seed)],
            |t, v| Ok(v[0].gelu().mul(&t.constant(w.clone()))?.sum()),
            H,
            None,
        )
        .unwrap();
        assert!(reports[0].rel_err < 1e-4, "{reports:?}");

        let w2 = rand_array(&[4, 3], seed + 9);
        let reports = check_inputs(
            &[rand_array(&[5, 3], seed)],
            |t, v| Ok(v[0].embedding(&[4, 0, 4, 2])?.mul(&t.constant(w2.clone()))?.sum()),
            H,
            None,
        )
        .unwrap();
        assert!(reports[0].rel_err < 1e-4, "{reports:?}");
    }
}

#[test]
fn shape_ops_gradients() {
    for seed in 0..10 {
        let w = rand_array(&[2, 4, 3, 2], seed + 3);
        let reports = check_inputs(
            &[rand_array(&[2, 3, 4, 2], seed)],
            |t, v| Ok(v[0].swap_axes12()?.mul(&t.constant(w.clone()))?.sum()),
            H,
            None,
        )
        .unwrap();
        assert!(reports[0].rel_err < 1e-4);

        let w = rand_array(&[7, 3], seed + 4);
        let reports = check_inputs(
            &[rand_array(&[2, 3], seed), rand_array(&[4, 3], seed + 1)],
            |t, v| {
                let c = t.concat_rows(&[v[0], v[1]])?;
                let g = c.gather_rows(&[5, 0, 0, 2, 1, 3, 4])?;
                let g = g.reshape(vec![7, 3])?;
                Ok(g.mul(&t.constant(w.clone()))?.scale(0.5).mean())
            },
            H,
            None,
        )
        .unwrap();
        assert!(reports.iter().all(|r| r.rel_err < 1e-4), "{reports:?}");

        let reports = check_inputs(
            &[rand_array(&[3, 4], seed), rand_array(&[4], seed + 2)],
            |t, v| {
                let masked = v[0].add_bias(&v[1])?.add_broadcast_const(&[0.0, -1e9, 0.5, 0.0], 1, 3)?;
                let w = t.constant(rand_array(&[3, 4], 77));
                Ok(masked.softmax_rows().mul(&w)?.sum())
            },
            H,
            None,
        )
        .unwrap();
        assert!(reports.iter().all(|r| r.rel_err < 1e-4), "{reports:?}");
    }
}

#[test]
fn broadcast_const_layout() {
    let tape = Tape::<f64>::new();
    // [outer=2, group=2, block=2]
    let a = tape.leaf(NdArray::zeros(vec![2, 2, 2]));
    let out = a.add_broadcast_const(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap().to_vec();
    assert_eq!(out, vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
    assert!(a.add_broadcast_const(&[1.0; 3], 2, 2).is_err());
}

#[test]
fn backward_examples() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(NdArray::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap().with_requires_grad(true));
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);

    let tape = Tape::<f64>::new();
    let x = tape.leaf(NdArray::new(vec![2], vec![1.0, 2.0]).unwrap().with_requires_grad(true));
    let loss = x.mul(&x).unwrap().sum();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    // a second sweep accumulates into the leaf
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[4.0, 8.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(NdArray::zeros(vec![2]).with_requires_grad(true));
    assert!(matches!(tape.backward(x).unwrap_err(), NumError::Contract(_)));
}

#[test]
fn composite_mlp_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let inputs = [
            rand_array(&[4, 5], seed),
            rand_array(&[5, 6], seed + 1),
            rand_array(&[6], seed + 2),
            rand_array(&[6, 3], seed + 3),
        ];
        let reports = check_inputs(
            &inputs,
            |_, v| {
                let h = v[0].matmul(&v[1])?.add_bias(&v[2])?.gelu();
                let logits = h.matmul(&v[3])?;
                Ok(logits.cross_entropy(&[0, 2, -100, 1], -100)?.loss)
            },
            H,
            None,
        )
        .unwrap();
        assert!(reports.iter().all(|r| r.rel_err < 1e-4), "{reports:?}");
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let run = || {
        let tape = Tape::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = tape.leaf(NdArray::randn(vec![8, 16], 1.0, &mut rng).with_requires_grad(true));
        let b = tape.leaf(NdArray::randn(vec![16, 4], 1.0, &mut rng).with_requires_grad(true));
        let loss = a.matmul(&b).unwrap().softmax_rows().cross_entropy(&[0, 1, 2, 3, 0, 1, 2, 3], -1).unwrap();
        loss.loss.backward().unwrap();
        (a.grad().unwrap(), b.grad().unwrap())
    };
    assert_eq!(run(), run());
}
