//! First-order optimizers over [`MlpParams`].

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zero_gradients(),
            v: params.zero_gradients(),
            step: 0,
        }
    }

    /// Applies one bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("adam gradient".into()));
        }
        if grads.weights.len() != params.layers().len() {
            return Err(Error::Shape {
                context: "adam gradient layers",
                expected: params.layers().len(),
                got: grads.weights.len(),
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (l, layer) in params.layers_mut().iter_mut().enumerate() {
            let pairs = [
                (&mut layer.weights, &grads.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]),
                (&mut layer.biases, &grads.biases[l], &mut self.m.biases[l], &mut self.v.biases[l]),
            ];
            for (p, g, m, v) in pairs {
                if p.len() != g.len() {
                    return Err(Error::Shape {
                        context: "adam gradient",
                        expected: p.len(),
                        got: g.len(),
                    });
                }
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    p[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Plain gradient descent: `θ ← θ − lr·g`.
pub fn sgd_step(params: &mut MlpParams, grads: &Gradients, lr: f64) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("sgd gradient".into()));
    }
    for (l, layer) in params.layers_mut().iter_mut().enumerate() {
        for (p, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
            *p -= lr * g;
        }
        for (p, g) in layer.biases.iter_mut().zip(&grads.biases[l]) {
            *p -= lr * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut rng = Rng::new(1);
        let mut p = MlpParams::new(&[3, 4, 2], &mut rng).unwrap();
        let before = p.clone();
        let mut opt = AdamState::new(&p, AdamConfig::default());
        let zero = p.zero_gradients();
        opt.step(&mut p, &zero).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut p = MlpParams::zeros(&[1, 1]).unwrap();
        let mut opt = AdamState::new(&p, AdamConfig::default());
        let mut g = p.zero_gradients();
        g.weights[0][0] = 0.5;
        g.biases[0][0] = -2.0;
        for _ in 0..100 {
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.layers()[0].weights[0] < 0.0);
        assert!(p.layers()[0].biases[0] > 0.0);
        assert_eq!(opt.step, 100);
    }

    #[test]
    fn one_step_matches_hand_formula() {
        let mut p = MlpParams::zeros(&[1, 1]).unwrap();
        p.layers_mut()[0].weights[0] = 0.25;
        let cfg = AdamConfig::default();
        let mut opt = AdamState::new(&p, cfg);
        // Pretend two steps already happened.
        opt.step = 2;
        opt.m.weights[0][0] = 0.1;
        opt.v.weights[0][0] = 0.04;
        let mut g = p.zero_gradients();
        g.weights[0][0] = 0.3;
        opt.step(&mut p, &g).unwrap();

        let m = 0.9 * 0.1 + 0.1 * 0.3;
        let v = 0.999 * 0.04 + 0.001 * 0.09;
        let mh = m / (1.0 - 0.9f64.powi(3));
        let vh = v / (1.0 - 0.999f64.powi(3));
        let want = 0.25 - 1e-3 * mh / (vh.sqrt() + 1e-8);
        assert!((p.layers()[0].weights[0] - want).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut p = MlpParams::zeros(&[1, 1]).unwrap();
        let mut opt = AdamState::new(&p, AdamConfig::default());
        let mut g = p.zero_gradients();
        g.biases[0][0] = f64::NAN;
        assert!(matches!(opt.step(&mut p, &g), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sgd_descends() {
        let mut p = MlpParams::zeros(&[1, 1]).unwrap();
        let mut g = p.zero_gradients();
        g.weights[0][0] = 1.0;
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.layers()[0].weights[0], -0.1);
    }
}
