use super::*;

fn store(entries: &[(&str, Tensor)]) -> Params {
    let mut p = Params::new();
    for (n, t) in entries {
        p.insert(*n, t.clone());
    }
    p
}

#[test]
fn matmul_identity() {
    let params = Params::new();
    let mut tape = Tape::new(&params);
    let a = tape.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 4.0, 1.25]));
    let i = tape.constant(Tensor::identity(3));
    let out = tape.matmul(a, i).unwrap();
    assert_eq!(tape.value(out), tape.value(a));
}

#[test]
fn matmul_shape_error_names_op() {
    let params = Params::new();
    let mut tape = Tape::new(&params);
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(AutodiffError::Shape { op, .. }) => assert_eq!(op, "matmul"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cross_entropy_of_zero_logits_is_ln_k() {
    let params = Params::new();
    let mut tape = Tape::new(&params);
    for k in [2usize, 5, 17] {
        let z = tape.constant(Tensor::zeros(&[k]));
        let l = tape.softmax_cross_entropy(z, k - 1).unwrap();
        assert!((tape.value(l).item() - (k as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn excluded_column_leaves_softmax() {
    let params = Params::new();
    let mut tape = Tape::new(&params);
    let z = tape.constant(Tensor::matrix(1, 3, vec![0.0, 100.0, 0.0]));
    let l = tape.cross_entropy_rows(z, &[0], &[Some(1)]).unwrap();
    assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn bilstm_shape_contract() {
    let mut params = Params::new();
    let layer = |name: &str, input: usize, params: &mut Params| LstmWeights {
        w: params.insert(format!("{name}.w"), Tensor::new(vec![16, input + 4], vec![0.1; 16 * (input + 4)])),
        b: params.insert(format!("{name}.b"), Tensor::zeros(&[16])),
        hidden: 4,
    };
    let layers = vec![BiLstmLayer {
        forward: layer("f", 3, &mut params),
        backward: layer("b", 3, &mut params),
    }];
    let mut tape = Tape::new(&params);
    let xs: Vec<Var> = (0..5)
        .map(|t| tape.constant(Tensor::vector(vec![t as f64 * 0.1; 3])))
        .collect();
    let hs = bilstm(&mut tape, &xs, &layers, 0.0).unwrap();
    assert_eq!(hs.len(), 5);
    assert!(hs.iter().all(|h| tape.value(*h).shape() == [8]));
}

#[test]
fn sum_gradient_is_all_ones_and_unused_is_zero() {
    let params = store(&[
        ("x", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0])),
        ("unused", Tensor::vector(vec![5.0, 6.0])),
    ]);
    let mut tape = Tape::new(&params);
    let x = tape.param(params.id("x").unwrap());
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(params.id("x").unwrap()).data(), &[1.0; 4]);
    assert_eq!(g.get(params.id("unused").unwrap()).data(), &[0.0; 2]);
}

#[test]
fn shared_use_accumulates() {
    let params = store(&[("x", Tensor::vector(vec![3.0]))]);
    let mut tape = Tape::new(&params);
    let x = tape.param(params.id("x").unwrap());
    let y = tape.mul(x, x).unwrap();
    let y = tape.add(y, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(params.id("x").unwrap()).data(), &[7.0]);
}

#[test]
fn backward_before_forward_is_a_state_error() {
    let params = Params::new();
    let mut tape = Tape::new(&params);
    let other = {
        let mut t = Tape::new(&params);
        t.constant(Tensor::scalar(1.0))
    };
    assert!(matches!(tape.backward(other), Err(AutodiffError::State(_))));
    let v = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(v), Err(AutodiffError::State(_))));
}

#[test]
fn overflow_is_a_numeric_error() {
    let params = Params::new();
    let mut tape = Tape::new(&params);
    let x = tape.constant(Tensor::scalar(1e300));
    assert_eq!(
        tape.scale(x, 1e300).unwrap_err(),
        AutodiffError::Numeric { op: "scale" }
    );
}

#[test]
fn dropout_identity_in_eval_and_seeded_in_training() {
    let params = Params::new();
    let mut tape = Tape::new(&params);
    let x = tape.constant(Tensor::vector(vec![1.0; 50]));
    assert_eq!(tape.dropout(x, 0.33).unwrap(), x);

    let masks: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let mut t = Tape::training(&params, 7);
            let x = t.constant(Tensor::vector(vec![1.0; 50]));
            let y = t.dropout(x, 0.33).unwrap();
            t.value(y).data().to_vec()
        })
        .collect();
    assert_eq!(masks[0], masks[1]);
    assert!(masks[0].iter().any(|&m| m == 0.0));
    assert!(masks[0].iter().all(|&m| m == 0.0 || (m - 1.0 / 0.67).abs() < 1e-12));
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut params = store(&[("p", Tensor::vector(vec![0.5, -1.0]))]);
    let before = params.clone();
    let mut adam = Adam::new(&params, AdamConfig::default());
    adam.step(&mut params, &Gradients::zeros_like(&before));
    assert_eq!(params, before);
}

#[test]
fn adam_first_step_is_lr_regardless_of_scale() {
    for g in [1e-3, 1.0, 250.0] {
        let mut params = store(&[("p", Tensor::vector(vec![1.0]))]);
        let mut grads = Gradients::zeros_like(&params);
        grads.get_mut(ParamId(0)).data_mut()[0] = g;
        let mut adam = Adam::new(&params, AdamConfig::default());
        adam.step(&mut params, &grads);
        let delta = 1.0 - params.get(ParamId(0)).data()[0];
        assert!((delta - 1e-3).abs() < 1e-8, "g={g}: {delta}");
    }
}

#[test]
fn sgd_definition() {
    let mut params = store(&[("p", Tensor::vector(vec![1.0]))]);
    let mut grads = Gradients::zeros_like(&params);
    grads.get_mut(ParamId(0)).data_mut()[0] = 2.0;
    Sgd { lr: 0.0 }.step(&mut params, &grads);
    assert_eq!(params.get(ParamId(0)).data(), &[1.0]);
    Sgd { lr: 0.1 }.step(&mut params, &grads);
    assert!((params.get(ParamId(0)).data()[0] - 0.8).abs() < 1e-15);
}
