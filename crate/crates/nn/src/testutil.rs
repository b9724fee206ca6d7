//! Finite-difference gradient checks shared by the layer tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::layer::{Ctx, Layer};
use crate::tensor::Tensor;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Compare the backward pass of `layer` against central differences of the
/// scalar `sum(forward(x) * r)` for a random `r`, both for the input and for
/// every trainable parameter. The probe re-runs the training forward with
/// frozen statistics, so batch norm is differentiated through its batch
/// moments.
pub fn check_gradients(layer: &mut dyn Layer, x: Tensor, rng: &mut ChaCha8Rng, tol: f64) {
    let y = layer.forward(x.clone(), &mut Ctx::train(0));
    let r = random_tensor(y.shape(), rng);
    let dx = layer.backward(r.clone());
    let loss = |l: &mut dyn Layer, x: &Tensor| -> f64 {
        let mut ctx = Ctx::train(0).no_cache().frozen_stats();
        l.forward(x.clone(), &mut ctx)
            .data()
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };
    let h = 1e-2f32;
    for idx in (0..x.len()).step_by(7) {
        let mut xp = x.clone();
        xp.data_mut()[idx] += h;
        let mut xm = x.clone();
        xm.data_mut()[idx] -= h;
        let fd = (loss(layer, &xp) - loss(layer, &xm)) / (2.0 * h as f64);
        let an = dx.data()[idx] as f64;
        assert!((fd - an).abs() < tol * (1.0 + an.abs()), "dx[{idx}]: fd {fd} vs {an}");
    }
    let mut grads = Vec::new();
    layer.visit("", &mut |name, p| {
        if p.trainable {
            grads.push((name.to_string(), p.grad.clone()))
        }
    });
    assert!(!grads.is_empty() || dx.len() == x.len());
    for (name, grad) in grads {
        for idx in (0..grad.len()).step_by(5) {
            let bump = |l: &mut dyn Layer, delta: f32| {
                l.visit_mut("", &mut |n, p| {
                    if n == name {
                        p.value.data_mut()[idx] += delta;
                    }
                });
            };
            bump(layer, h);
            let lp = loss(layer, &x);
            bump(layer, -2.0 * h);
            let lm = loss(layer, &x);
            bump(layer, h);
            let fd = (lp - lm) / (2.0 * h as f64);
            let an = grad[idx] as f64;
            assert!((fd - an).abs() < tol * (1.0 + an.abs()), "{name}[{idx}]: fd {fd} vs {an}");
        }
    }
}
