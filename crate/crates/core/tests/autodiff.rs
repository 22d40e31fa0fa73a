use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svgen_core::gradcheck::{check_inputs, DEFAULT_STEP};
use svgen_core::{ParamStore, Tape, Tensor};

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn detach_blocks_gradient() {
    let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap().with_requires_grad(true);
    let mut t = Tape::new();
    let a = t.leaf(&x);
    let d = t.detach(a);
    let y = t.mul(a, d).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    // d(x·sg(x))/dx = sg(x), not 2x.
    assert_eq!(g.get(a).unwrap(), &[1.0, 2.0, 3.0]);
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::full(&[2], 3.0)).unwrap();
    let b = store.add("b", Tensor::full(&[2], 1.0)).unwrap();
    let mut t = Tape::with_params(&store);
    t.freeze(&[b]);
    let (wv, bv) = (t.param(w), t.param(b));
    let y = t.mul(wv, bv).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.param(w).unwrap(), &[1.0, 1.0]);
    assert!(g.param(b).is_none_or(|v| v.iter().all(|x| *x == 0.0)));
}

#[test]
fn non_scalar_backward_is_rejected() {
    let mut t = Tape::new();
    let a = t.leaf(&tensor(&[2, 2], 1).with_requires_grad(true));
    assert!(t.backward(a).is_err());
}

#[test]
fn non_finite_values_are_reported() {
    let mut t = Tape::new();
    let a = t.constant(&[1], vec![-1.0]).unwrap();
    assert!(t.log(a).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..7, seed in any::<u64>()) {
        let mut t = Tape::new();
        let x = t.leaf(&tensor(&[rows, cols], seed));
        let s = t.softmax_axis(x, 1).unwrap();
        for r in t.value(s).chunks(cols) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax(rows in 1usize..4, cols in 2usize..6, seed in any::<u64>()) {
        let mut t = Tape::new();
        let x = t.leaf(&tensor(&[rows, cols], seed));
        let a = t.log_softmax_axis(x, 1).unwrap();
        let s = t.softmax_axis(x, 1).unwrap();
        for (l, p) in t.value(a).iter().zip(t.value(s)) {
            prop_assert!((l - p.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn broadcast_product_gradients(rows in 1usize..4, cols in 1usize..5, seed in any::<u64>()) {
        let inputs = [tensor(&[rows, cols], seed), tensor(&[1, cols], seed ^ 1)];
        let err = check_inputs(&inputs, |t, v| {
            let y = t.mul(v[0], v[1])?;
            let y = t.sigmoid(y)?;
            t.sum(y)
        }, DEFAULT_STEP).unwrap();
        prop_assert!(err < 1e-6, "rel error {err}");
    }

    #[test]
    fn matmul_gradients(m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in any::<u64>()) {
        let inputs = [tensor(&[m, k], seed), tensor(&[k, n], seed ^ 7)];
        let err = check_inputs(&inputs, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.square(y)?;
            t.sum(y)
        }, DEFAULT_STEP).unwrap();
        prop_assert!(err < 1e-6, "rel error {err}");
    }

    #[test]
    fn addition_is_commutative_in_value_and_gradient(n in 1usize..6, seed in any::<u64>()) {
        let (a, b) = (tensor(&[n], seed).with_requires_grad(true), tensor(&[n], seed ^ 3).with_requires_grad(true));
        let run = |swap: bool| {
            let mut t = Tape::new();
            let (x, y) = (t.leaf(&a), t.leaf(&b));
            let z = if swap { t.add(y, x) } else { t.add(x, y) }.unwrap();
            let z = t.exp(z).unwrap();
            let s = t.sum(z).unwrap();
            let g = t.backward(s).unwrap();
            (t.scalar(s), g.get(x).unwrap().to_vec(), g.get(y).unwrap().to_vec())
        };
        prop_assert_eq!(run(false), run(true));
    }
}
