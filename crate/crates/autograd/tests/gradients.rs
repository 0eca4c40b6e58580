//! Finite-difference checks for every differentiable layer, in f64.

use apnea_autograd::{grad_check, BatchNormState, Mode, Padding, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay out of the stencil.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    random(shape, rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Weighted sum so the upstream gradient is not uniform.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> apnea_autograd::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(random(&shape, &mut rng));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

#[test]
fn conv2d_input_weight_and_bias() {
    for (seed, stride, padding) in [
        (1, 1, Padding::Same),
        (2, 2, Padding::Same),
        (3, 2, Padding::Valid),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);

        let (wc, bc) = (w.clone(), b.clone());
        let r = grad_check(
            |t, x| {
                let w = t.constant(wc.clone());
                let b = t.constant(bc.clone());
                let y = t.conv2d(x, w, Some(b), stride, padding)?;
                project(t, y, seed)
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "input grad {}", r.max_rel_error);

        let (xc, bc) = (x.clone(), b.clone());
        let r = grad_check(
            |t, w| {
                let x = t.constant(xc.clone());
                let b = t.constant(bc.clone());
                let y = t.conv2d(x, w, Some(b), stride, padding)?;
                project(t, y, seed)
            },
            &w,
            EPS,
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "weight grad {}", r.max_rel_error);

        let (xc, wc) = (x.clone(), w.clone());
        let r = grad_check(
            |t, b| {
                let x = t.constant(xc.clone());
                let w = t.constant(wc.clone());
                let y = t.conv2d(x, w, Some(b), stride, padding)?;
                project(t, y, seed)
            },
            &b,
            EPS,
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "bias grad {}", r.max_rel_error);
    }
}

fn bn_loss(
    t: &mut Tape<f64>,
    x: Var,
    gamma: Var,
    beta: Var,
    mode: Mode,
) -> apnea_autograd::Result<Var> {
    let mut state = BatchNormState::new(3);
    state.running_mean = vec![0.1, -0.2, 0.3];
    state.running_var = vec![0.5, 1.5, 2.0];
    let y = t.batchnorm2d(x, gamma, beta, &mut state, mode, 0.1, 1e-5)?;
    project(t, y, 99)
}

#[test]
fn batchnorm_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[2, 3, 4, 4], &mut rng);
    let gamma = random(&[3], &mut rng).map(|v| v + 1.5);
    let beta = random(&[3], &mut rng);
    for mode in [Mode::Train, Mode::Eval] {
        let (g, b) = (gamma.clone(), beta.clone());
        let r = grad_check(
            |t, x| {
                let g = t.constant(g.clone());
                let b = t.constant(b.clone());
                bn_loss(t, x, g, b, mode)
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "{mode:?} input {}", r.max_rel_error);

        let (xc, b) = (x.clone(), beta.clone());
        let r = grad_check(
            |t, g| {
                let x = t.constant(xc.clone());
                let b = t.constant(b.clone());
                bn_loss(t, x, g, b, mode)
            },
            &gamma,
            EPS,
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "{mode:?} gamma {}", r.max_rel_error);

        let (xc, g) = (x.clone(), gamma.clone());
        let r = grad_check(
            |t, b| {
                let x = t.constant(xc.clone());
                let g = t.constant(g.clone());
                bn_loss(t, x, g, b, mode)
            },
            &beta,
            EPS,
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "{mode:?} beta {}", r.max_rel_error);
    }
}

#[test]
fn relu_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = away_from_zero(&[4, 6], &mut rng);
    let r = grad_check(
        |t, x| {
            let y = t.relu(x);
            project(t, y, 5)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
}

#[test]
fn max_pool_with_distinct_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // A shuffled ramp keeps every window maximum separated by far more than eps.
    let mut vals: Vec<f64> = (0..2 * 2 * 4 * 4).map(|i| i as f64 * 0.05).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = Tensor::from_vec(vec![2, 2, 4, 4], vals).unwrap();
    let r = grad_check(
        |t, x| {
            let y = t.max_pool2d(x)?;
            project(t, y, 6)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL, "{}", r.max_rel_error);
}

#[test]
fn global_average_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[2, 3, 4, 4], &mut rng);
    let r = grad_check(
        |t, x| {
            let y = t.global_avg_pool(x)?;
            project(t, y, 7)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL, "{}", r.max_rel_error);
}

#[test]
fn dense_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[3, 4], &mut rng);
    let w = random(&[4, 2], &mut rng);
    let b = random(&[2], &mut rng);
    let (wc, bc) = (w.clone(), b.clone());
    let r = grad_check(
        |t, x| {
            let w = t.constant(wc.clone());
            let b = t.constant(bc.clone());
            let y = t.dense(x, w, b)?;
            project(t, y, 8)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL);
    let (xc, bc) = (x.clone(), b.clone());
    let r = grad_check(
        |t, w| {
            let x = t.constant(xc.clone());
            let b = t.constant(bc.clone());
            let y = t.dense(x, w, b)?;
            project(t, y, 8)
        },
        &w,
        EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL);
    let (xc, wc) = (x.clone(), w.clone());
    let r = grad_check(
        |t, b| {
            let x = t.constant(xc.clone());
            let w = t.constant(wc.clone());
            let y = t.dense(x, w, b)?;
            project(t, y, 8)
        },
        &b,
        EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL);
}

#[test]
fn sigmoid_and_dropout_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[10], &mut rng).map(|v| v * 6.0);
    let r = grad_check(
        |t, x| {
            let y = t.sigmoid(x);
            project(t, y, 9)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL);

    // The mask must be identical across the perturbed evaluations.
    let r = grad_check(
        |t, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let y = t.dropout(x, 0.5, Mode::Train, &mut rng)?;
            project(t, y, 9)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL);
}

#[test]
fn residual_micro_model() {
    // conv -> bn -> relu -> add(shortcut) -> gap -> dense -> sigmoid
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&[2, 2, 4, 4], &mut rng);
    let w = random(&[2, 2, 3, 3], &mut rng);
    let dense_w = random(&[2, 1], &mut rng);
    let xc = x.clone();
    let dwc = dense_w.clone();
    let r = grad_check(
        |t, w| {
            let x = t.constant(xc.clone());
            let gamma = t.constant(Tensor::full(&[2], 1.0));
            let beta = t.constant(Tensor::zeros(&[2]));
            let mut state = BatchNormState::new(2);
            let h = t.conv2d(x, w, None, 1, Padding::Same)?;
            let h = t.batchnorm2d(h, gamma, beta, &mut state, Mode::Train, 0.1, 1e-5)?;
            let h = t.relu(h);
            let h = t.add(h, x)?;
            let h = t.global_avg_pool(h)?;
            let dw = t.constant(dwc.clone());
            let db = t.constant(Tensor::zeros(&[1]));
            let h = t.dense(h, dw, db)?;
            let p = t.sigmoid(h);
            Ok(t.sum(p))
        },
        &w,
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL, "{}", r.max_rel_error);
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut t = Tape::<f64>::new();
        let x = t.param(random(&[2, 1, 4, 4], &mut rng));
        let w = t.param(random(&[2, 1, 3, 3], &mut rng));
        let h = t.conv2d(x, w, None, 2, Padding::Same).unwrap();
        let h = t.dropout(h, 0.3, Mode::Train, &mut rng).unwrap();
        let s = t.sum(h);
        t.backward(s).unwrap();
        (t.value(h).clone(), t.grad(w).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn operations_do_not_mutate_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x0 = random(&[1, 2, 4, 4], &mut rng);
    let w0 = random(&[2, 2, 3, 3], &mut rng);
    let mut t = Tape::new();
    let x = t.param(x0.clone());
    let w = t.param(w0.clone());
    let g = t.param(Tensor::full(&[2], 1.0));
    let b = t.param(Tensor::zeros(&[2]));
    let mut state = BatchNormState::new(2);
    let h = t.conv2d(x, w, None, 1, Padding::Same).unwrap();
    let h = t.batchnorm2d(h, g, b, &mut state, Mode::Train, 0.1, 1e-5).unwrap();
    let h = t.relu(h);
    let h = t.max_pool2d(h).unwrap();
    let s = t.sum(h);
    t.backward(s).unwrap();
    assert_eq!(t.value(x), &x0);
    assert_eq!(t.value(w), &w0);
}
