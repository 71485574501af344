//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use satenq::numerics::{Gradients, MlpParams, Rng};

/// Central finite differences of `f` with respect to every parameter of `net`,
/// laid out like [`Gradients`].
pub fn finite_difference<F>(net: &MlpParams, h: f64, f: F) -> Gradients
where
    F: Fn(&MlpParams) -> f64,
{
    let mut probe = net.clone();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..net.layers().len() {
        let mut gw = vec![0.0; net.layers()[l].weights.len()];
        for (i, g) in gw.iter_mut().enumerate() {
            let w0 = net.layers()[l].weights[i];
            probe.layers_mut()[l].weights[i] = w0 + h;
            let up = f(&probe);
            probe.layers_mut()[l].weights[i] = w0 - h;
            let down = f(&probe);
            probe.layers_mut()[l].weights[i] = w0;
            *g = (up - down) / (2.0 * h);
        }
        let mut gb = vec![0.0; net.layers()[l].biases.len()];
        for (i, g) in gb.iter_mut().enumerate() {
            let b0 = net.layers()[l].biases[i];
            probe.layers_mut()[l].biases[i] = b0 + h;
            let up = f(&probe);
            probe.layers_mut()[l].biases[i] = b0 - h;
            let down = f(&probe);
            probe.layers_mut()[l].biases[i] = b0;
            *g = (up - down) / (2.0 * h);
        }
        weights.push(gw);
        biases.push(gb);
    }
    Gradients { weights, biases }
}

/// Largest `|a - n| / max(|a|, |n|)` over coordinates whose analytic value
/// exceeds `floor` in magnitude, and how many coordinates were compared.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients, floor: f64) -> (f64, usize) {
    let a = analytic.weights.iter().chain(&analytic.biases).flatten();
    let n = numeric.weights.iter().chain(&numeric.biases).flatten();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (&x, &y) in a.zip(n) {
        if x.abs() > floor {
            compared += 1;
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()));
        }
    }
    (worst, compared)
}

pub fn random_vec(n: usize, lo: f64, hi: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(lo, hi)).collect()
}

/// Plain-loop forward pass, independent of the library's layer code.
pub fn scalar_forward(net: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut act = x.to_vec();
    let n_layers = net.layers().len();
    for (l, layer) in net.layers().iter().enumerate() {
        let mut next = Vec::with_capacity(layer.out_dim);
        for o in 0..layer.out_dim {
            let mut z = layer.biases[o];
            for i in 0..layer.in_dim {
                z += layer.weights[o * layer.in_dim + i] * act[i];
            }
            next.push(if l + 1 < n_layers { z.max(0.0) } else { z });
        }
        act = next;
    }
    act
}

/// One random network with two hidden layers of 32 and a random linear
/// readout, checked against central differences. Returns the worst
/// coordinate relative error.
pub fn gradient_trial(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let in_dim = 1 + rng.below(8);
    let out_dim = 1 + rng.below(4);
    let net = MlpParams::new(&[in_dim, 32, 32, out_dim], &mut rng).unwrap();
    let x = random_vec(in_dim, -2.0, 2.0, &mut rng);
    let u = random_vec(out_dim, -1.0, 1.0, &mut rng);
    let analytic = net.backward(&x, &u).unwrap();
    let numeric = finite_difference(&net, 1e-5, |p| {
        scalar_forward(p, &x).iter().zip(&u).map(|(o, w)| o * w).sum()
    });
    max_relative_error(&analytic, &numeric, 1e-8).0
}
