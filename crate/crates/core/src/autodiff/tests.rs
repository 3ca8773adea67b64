use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{self, DEFAULT_STEP};
use super::*;
use crate::error::Error;

fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(rows, cols, 1.0, &mut rng)
}

/// Reduces a matrix output to a scalar with fixed random weights so every
/// output entry contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> crate::error::Result<Var> {
    let (r, c) = tape.shape(x);
    let w = tape.leaf(rand_tensor(r, c, seed ^ 0xabcd));
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut tape = Tape::new();
    let i = tape.leaf(Tensor::identity(2));
    let x = tape.leaf(Tensor::from_rows(&[vec![3.0, -1.0], vec![0.5, 2.0]]).unwrap());
    let y = tape.matmul(i, x).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let a = tape.leaf(Tensor::row(vec![1.0, 2.0]));
    let b = tape.leaf(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).item(), 11.0);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(2, 3));
    let b = tape.leaf(Tensor::zeros(2, 3));
    match tape.matmul(a, b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, (2, 3));
            assert_eq!(rhs, (2, 3));
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let inputs = [rand_tensor(3, 4, 1), rand_tensor(4, 2, 2)];
    let gc = gradcheck::check(&inputs, DEFAULT_STEP, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y, 3)
    })
    .unwrap();
    assert!(gc.max_relative_error() < 1e-6, "{}", gc.max_relative_error());
}

#[test]
fn softmax_symmetry_and_stability() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(vec![0.0, 0.0]));
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let x = tape.leaf(Tensor::row(vec![1000.0, 0.0]));
    let y = tape.softmax(x).unwrap();
    let v = tape.value(y);
    assert!(v.all_finite());
    assert!((v.data()[0] - 1.0).abs() < 1e-12);
    assert!(v.data()[1] < 1e-300);
}

#[test]
fn softmax_rejects_nan() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(vec![f64::NAN, 1.0]));
    assert!(matches!(tape.softmax(x), Err(Error::Numeric(_))));
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let inputs = [rand_tensor(1, 5, 7)];
    let gc = gradcheck::check(&inputs, DEFAULT_STEP, |t, v| {
        let y = t.softmax(v[0])?;
        weighted_sum(t, y, 8)
    })
    .unwrap();
    assert!(gc.max_relative_error() < 1e-6);
}

#[test]
fn layer_norm_cases() {
    let mut tape = Tape::new();
    let g = tape.leaf(Tensor::filled(1, 4, 1.0));
    let b = tape.leaf(Tensor::zeros(1, 4));
    let x = tape.leaf(Tensor::filled(1, 4, 3.5));
    let y = tape.layer_norm(x, g, b).unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));

    let g2 = tape.leaf(Tensor::filled(1, 2, 1.0));
    let b2 = tape.leaf(Tensor::zeros(1, 2));
    let x2 = tape.leaf(Tensor::row(vec![1.0, -1.0]));
    let y2 = tape.layer_norm(x2, g2, b2).unwrap();
    let v = tape.value(y2).data();
    assert!((v[0] - 1.0).abs() < 1e-5 && (v[1] + 1.0).abs() < 1e-5);

    let g1 = tape.leaf(Tensor::filled(1, 1, 1.0));
    let b1 = tape.leaf(Tensor::zeros(1, 1));
    let x1 = tape.leaf(Tensor::row(vec![2.0]));
    assert!(matches!(tape.layer_norm(x1, g1, b1), Err(Error::Shape(_))));
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let inputs = [rand_tensor(1, 8, 11), rand_tensor(1, 8, 12), rand_tensor(1, 8, 13)];
    let gc = gradcheck::check(&inputs, DEFAULT_STEP, |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2])?;
        weighted_sum(t, y, 14)
    })
    .unwrap();
    assert!(gc.max_relative_error() < 1e-5);
}

#[test]
fn pointwise_examples() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::scalar(0.0));
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(s).item(), 0.5);

    let x = tape.leaf(Tensor::row(vec![-1.0, 2.0]));
    let r = tape.relu(x);
    let l = tape.sum(r);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).data(), &[0.0, 1.0]);
}

#[test]
fn unflatten_inverts_flatten() {
    let c = rand_tensor(3, 4, 21);
    let mut tape = Tape::new();
    let x = tape.leaf(c.clone());
    let f = tape.flatten(x);
    assert_eq!(tape.shape(f), (1, 12));
    let u = tape.unflatten(f, 3, 4).unwrap();
    assert_eq!(tape.value(u), &c);
}

#[test]
fn dropout_modes_and_rate_validation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(2, 5, 4));
    let y = tape.dropout(x, 0.0, true, &mut rng).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    assert!(matches!(
        tape.dropout(x, 1.0, true, &mut rng),
        Err(Error::Parameter(_))
    ));
    assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
}

#[test]
fn dropout_survivor_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::filled(1, 100_000, 1.0));
    let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let v = tape.value(y);
    let survivors = v.data().iter().filter(|&&x| x != 0.0).count() as f64 / 1e5;
    assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
    assert!(v.data().iter().all(|&x| x == 0.0 || x == 2.0));
}

#[test]
fn dropout_gradient_uses_recorded_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::filled(1, 50, 1.0));
    let y = tape.dropout(x, 0.3, true, &mut rng).unwrap();
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).data(), tape.value(y).data());
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::row(vec![1.0, 0.0, 0.0]));
    let l = tape.cross_entropy(p, 0).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
    let wrong = tape.cross_entropy(p, 1).unwrap();
    assert!((tape.value(wrong).item() - 1e12f64.ln()).abs() < 1e-9);

    let q = tape.leaf(Tensor::row(vec![0.5, 0.5]));
    let l = tape.cross_entropy(q, 1).unwrap();
    assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-15);

    assert!(matches!(
        tape.cross_entropy(q, 2),
        Err(Error::Index { index: 2, len: 2 })
    ));
}

#[test]
fn cross_entropy_gradient_through_softmax() {
    let inputs = [rand_tensor(1, 6, 31)];
    let gc = gradcheck::check(&inputs, DEFAULT_STEP, |t, v| {
        let p = t.softmax(v[0])?;
        t.cross_entropy(p, 4)
    })
    .unwrap();
    assert!(gc.max_relative_error() < 1e-6);
    // d(-ln softmax_k)/dx = p - onehot(k)
    let mut p = inputs[0].data().to_vec();
    softmax_in_place(&mut p);
    p[4] -= 1.0;
    let closed = Tensor::row(p);
    assert!(gc.analytic[0].max_abs_diff(&closed) < 1e-12);
}

#[test]
fn backward_requires_scalar_and_accumulates() {
    let mut tape = Tape::new();
    let a = tape.leaf(rand_tensor(2, 2, 41));
    assert!(matches!(tape.backward(a), Err(Error::Shape(_))));

    let b = tape.leaf(rand_tensor(2, 2, 42));
    let y = tape.mul(a, b).unwrap();
    let l = tape.sum(y);
    assert!(tape.grad(a).data().iter().all(|&g| g == 0.0));
    tape.backward(l).unwrap();
    let once = tape.grad(a);
    assert_eq!(once, *tape.value(b));
    tape.backward(l).unwrap();
    let twice = tape.grad(a);
    for (x, y) in twice.data().iter().zip(once.data()) {
        assert_eq!(*x, 2.0 * y);
    }
    tape.zero_grad();
    assert!(tape.grad(a).data().iter().all(|&g| g == 0.0));
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(a), once);
}

#[test]
fn remaining_ops_match_finite_differences() {
    for seed in 0..10u64 {
        let inputs = [
            rand_tensor(2, 3, seed * 7 + 1),
            rand_tensor(2, 3, seed * 7 + 2),
            rand_tensor(1, 3, seed * 7 + 3),
            rand_tensor(1, 1, seed * 7 + 4),
            rand_tensor(4, 3, seed * 7 + 5),
        ];
        let gc = gradcheck::check(&inputs, DEFAULT_STEP, |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let m = t.mul(d, v[1])?;
            let r = t.add_row(m, v[2])?;
            let sig = t.sigmoid(r);
            let th = t.tanh(v[0]);
            let ls = t.log_sigmoid(v[1]);
            let cat = t.concat_cols(&[sig, th])?;
            let rows = t.concat_rows(&[ls, v[2]])?;
            let sl = t.slice_cols(cat, 1, 3)?;
            let sr = t.slice_rows(rows, 1, 2)?;
            let ms = t.mul_scalar(sl, v[3])?;
            let tr = t.transpose(sr);
            let tt = t.transpose(tr);
            let prod = t.matmul_nt(ms, tt)?;
            let g = t.gather_rows(v[4], &[Some(2), None, Some(0), Some(2)])?;
            let gf = t.flatten(g);
            let gu = t.unflatten(gf, 2, 6)?;
            let gr = t.relu(gu);
            let sc = t.scale(gr, 0.7);
            let lg = t.sigmoid(sc);
            let lg = t.log(lg);
            let a = weighted_sum(t, prod, seed)?;
            let b = weighted_sum(t, lg, seed + 100)?;
            t.add(a, b)
        })
        .unwrap();
        assert!(
            gc.max_relative_error() < 1e-5,
            "seed {seed}: {}",
            gc.max_relative_error()
        );
    }
}

#[test]
fn gather_rejects_out_of_vocabulary() {
    let mut tape = Tape::new();
    let t = tape.leaf(Tensor::zeros(3, 2));
    assert!(matches!(
        tape.gather_rows(t, &[Some(3)]),
        Err(Error::Vocabulary { id: 3, vocab: 3 })
    ));
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut tape = Tape::new();
        let a = tape.leaf(rand_tensor(3, 5, 1));
        let b = tape.leaf(rand_tensor(5, 4, 2));
        let y = tape.matmul(a, b).unwrap();
        let y = tape.dropout(y, 0.2, true, &mut rng).unwrap();
        let p = tape.softmax(y).unwrap();
        let l = weighted_sum(&mut tape, p, 3).unwrap();
        tape.backward(l).unwrap();
        (tape.grad(a), tape.grad(b))
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    assert_eq!(a1.data(), a2.data());
    assert_eq!(b1.data(), b2.data());
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-500.0f64..500.0, 1..40)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(xs));
        let y = tape.softmax(x).unwrap();
        let v = tape.value(y);
        prop_assert!(v.data().iter().all(|&p| p >= 0.0));
        prop_assert!((v.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flatten_unflatten_identities(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
        let c = rand_tensor(rows, cols, seed);
        let mut tape = Tape::new();
        let x = tape.leaf(c.clone());
        let f = tape.flatten(x);
        let u = tape.unflatten(f, rows, cols).unwrap();
        prop_assert_eq!(tape.value(u), &c);
        let f2 = tape.flatten(u);
        prop_assert_eq!(tape.value(f2), tape.value(f));
    }
}
