#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavetex::{ParamStore, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Reduces `out` to a scalar with fixed random weights so every output
/// element contributes a distinct gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let w = uniform(&mut r, tape.shape(out), 1.0);
    let w = tape.constant(w);
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

/// Max relative error between tape gradients of `f` with respect to the
/// leaf `inputs` and central differences.
pub fn check_inputs(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone().with_grad())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out, &mut ParamStore::new()).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for j in 0..inputs[k].numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[j] += STEP;
            let plus = eval(&xs);
            xs[k].data_mut()[j] -= 2.0 * STEP;
            let minus = eval(&xs);
            worst = worst.max(rel_err(analytic[j], (plus - minus) / (2.0 * STEP)));
        }
    }
    worst
}

/// Same as [`check_inputs`] but over every parameter in `store`.
pub fn check_params(
    store: &mut ParamStore<f64>,
    f: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
) -> f64 {
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store);
    tape.backward(out, store).unwrap();
    let analytic: Vec<Vec<f64>> = store.params().iter().map(|p| p.tensor.grad().unwrap().to_vec()).collect();
    let mut worst = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = store.params()[pi].tensor.data()[j];
            let at = |v: f64, store: &mut ParamStore<f64>| {
                store.params_mut()[pi].tensor.data_mut()[j] = v;
                let mut tape = Tape::new();
                let out = f(&mut tape, store);
                tape.value(out).item()
            };
            let plus = at(orig + STEP, store);
            let minus = at(orig - STEP, store);
            store.params_mut()[pi].tensor.data_mut()[j] = orig;
            worst = worst.max(rel_err(grad[j], (plus - minus) / (2.0 * STEP)));
        }
    }
    worst
}

/// Keeps entries away from zero so ReLU kinks stay outside the FD stencil.
pub fn away_from_zero(t: &mut Tensor<f64>) {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
}
