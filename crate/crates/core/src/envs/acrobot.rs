//! Two-link underactuated swing-up, classic-control formulation.
//!
//! Unit link lengths and masses, centre of mass at mid-link, unit moments of
//! inertia, RK4 integration over dt = 0.2 with torque in {-1, 0, +1}.

use std::f64::consts::PI;

use super::{EnvStepResult, Environment};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const DT: f64 = 0.2;
pub const LINK_LENGTH_1: f64 = 1.0;
pub const LINK_MASS_1: f64 = 1.0;
pub const LINK_MASS_2: f64 = 1.0;
pub const LINK_COM_1: f64 = 0.5;
pub const LINK_COM_2: f64 = 0.5;
pub const LINK_MOI: f64 = 1.0;
pub const MAX_VEL_1: f64 = 4.0 * PI;
pub const MAX_VEL_2: f64 = 9.0 * PI;
pub const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
pub const MAX_STEPS: usize = 500;
const G: f64 = 9.8;

#[derive(Debug, Clone)]
pub struct Acrobot {
    /// [theta1, theta2, dtheta1, dtheta2]
    state: [f64; 4],
    steps: usize,
    done: bool,
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

fn wrap(x: f64) -> f64 {
    let mut v = x;
    while v > PI {
        v -= 2.0 * PI;
    }
    while v < -PI {
        v += 2.0 * PI;
    }
    v
}

impl Acrobot {
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

    pub fn observation(s: [f64; 4]) -> Vec<f64> {
        vec![s[0].cos(), s[0].sin(), s[1].cos(), s[1].sin(), s[2], s[3]]
    }

    /// Tip height above the pivot, in link lengths.
    pub fn tip_height(s: [f64; 4]) -> f64 {
        -s[0].cos() - (s[1] + s[0]).cos()
    }

    fn derivs(s: [f64; 4], torque: f64) -> [f64; 4] {
        let (m1, m2) = (LINK_MASS_1, LINK_MASS_2);
        let (l1, lc1, lc2) = (LINK_LENGTH_1, LINK_COM_1, LINK_COM_2);
        let (i1, i2) = (LINK_MOI, LINK_MOI);
        let [theta1, theta2, dtheta1, dtheta2] = s;
        let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
        let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
        let phi2 = m2 * lc2 * G * (theta1 + theta2 - PI / 2.0).cos();
        let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
            - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
            + (m1 * lc1 + m2 * l1) * G * (theta1 - PI / 2.0).cos()
            + phi2;
        let ddtheta2 = (torque + d2 / d1 * phi1
            - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin()
            - phi2)
            / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
        let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
        [dtheta1, dtheta2, ddtheta1, ddtheta2]
    }

    /// One RK4 step followed by angle wrapping and velocity clipping.
    pub fn dynamics(s: [f64; 4], action: usize) -> [f64; 4] {
        let torque = TORQUES[action];
        let add = |a: [f64; 4], k: [f64; 4], h: f64| -> [f64; 4] {
            [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2], a[3] + h * k[3]]
        };
        let k1 = Self::derivs(s, torque);
        let k2 = Self::derivs(add(s, k1, DT / 2.0), torque);
        let k3 = Self::derivs(add(s, k2, DT / 2.0), torque);
        let k4 = Self::derivs(add(s, k3, DT), torque);
        let mut n = [0.0; 4];
        for i in 0..4 {
            n[i] = s[i] + DT / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        [
            wrap(n[0]),
            wrap(n[1]),
            n[2].clamp(-MAX_VEL_1, MAX_VEL_1),
            n[3].clamp(-MAX_VEL_2, MAX_VEL_2),
        ]
    }
}

impl Environment for Acrobot {
    fn state_dim(&self) -> usize {
        6
    }

    fn num_actions(&self) -> usize {
        3
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        for v in &mut self.state {
            *v = rng.uniform_range(-0.1, 0.1);
        }
        self.steps = 0;
        self.done = false;
        Self::observation(self.state)
    }

    fn step(&mut self, action: usize, _rng: &mut Rng) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::Contract("acrobot stepped after episode end".into()));
        }
        if action >= 3 {
            return Err(Error::Contract(format!("acrobot action {action} out of range")));
        }
        self.state = Self::dynamics(self.state, action);
        self.steps += 1;
        let terminal = Self::tip_height(self.state) > LINK_LENGTH_1;
        let truncated = !terminal && self.steps >= MAX_STEPS;
        self.done = terminal || truncated;
        Ok(EnvStepResult {
            next_state: Self::observation(self.state),
            reward: if terminal { 0.0 } else { -1.0 },
            done: self.done,
            truncated,
        })
    }
}
