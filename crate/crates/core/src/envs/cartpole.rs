//! Cart-pole balancing with the classic-control constants and Euler integration.

use super::{EnvStepResult, Environment};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const X_LIMIT: f64 = 2.4;
pub const MAX_STEPS: usize = 500;

#[derive(Debug, Clone)]
pub struct CartPole {
    /// [x, x_dot, theta, theta_dot]
    state: [f64; 4],
    steps: usize,
    done: bool,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            steps: 0,
            done: true,
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// One Euler step of the cart-pole equations of motion.
    pub fn dynamics(state: [f64; 4], action: usize) -> [f64; 4] {
        let [x, x_dot, theta, theta_dot] = state;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let total_mass = CART_MASS + POLE_MASS;
        let polemass_length = POLE_MASS * POLE_HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;
        [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ]
    }
}

impl Environment for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        for v in &mut self.state {
            *v = rng.uniform_range(-0.05, 0.05);
        }
        self.steps = 0;
        self.done = false;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize, _rng: &mut Rng) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::Contract("cartpole stepped after episode end".into()));
        }
        if action >= 2 {
            return Err(Error::Contract(format!("cartpole action {action} out of range")));
        }
        self.state = Self::dynamics(self.state, action);
        self.steps += 1;
        let [x, _, theta, _] = self.state;
        let terminal = !(-X_LIMIT..=X_LIMIT).contains(&x)
            || !(-THETA_LIMIT..=THETA_LIMIT).contains(&theta);
        let truncated = !terminal && self.steps >= MAX_STEPS;
        self.done = terminal || truncated;
        Ok(EnvStepResult {
            next_state: self.state.to_vec(),
            reward: 1.0,
            done: self.done,
            truncated,
        })
    }
}
