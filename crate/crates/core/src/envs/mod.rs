//! Environments behind one stepping contract.

mod acrobot;
mod cartpole;
mod gridworld;

use serde::{Deserialize, Serialize};

pub use acrobot::Acrobot;
pub use cartpole::CartPole;
pub use gridworld::{gridworld_optimal, GridWorld, GridWorldConfig, GridWorldOptimum, MOVES};

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Terminal or step-capped.
    pub done: bool,
    /// True when `done` came from the step cap rather than a terminal state.
    pub truncated: bool,
}

pub trait Environment: Send {
    fn state_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut Rng) -> Result<EnvStepResult>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: usize, rng: &mut Rng) -> Result<EnvStepResult> {
        (**self).step(action, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub action_noise_prob: f64,
}

/// Replaces the agent's action with a uniformly random one with fixed probability.
pub struct ActionNoise<E> {
    inner: E,
    noise: NoiseConfig,
}

impl<E: Environment> ActionNoise<E> {
    pub fn new(inner: E, noise: NoiseConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise.action_noise_prob) {
            return Err(Error::config(
                "env.action_noise_prob",
                "must lie in [0, 1]",
            ));
        }
        Ok(Self { inner, noise })
    }
}

impl<E: Environment> Environment for ActionNoise<E> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.inner.reset(rng)
    }
    fn step(&mut self, action: usize, rng: &mut Rng) -> Result<EnvStepResult> {
        let executed = if rng.bernoulli(self.noise.action_noise_prob) {
            rng.below(self.inner.num_actions())
        } else {
            action
        };
        self.inner.step(executed, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Gridworld,
    Cartpole,
    Acrobot,
}

/// Environment selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: EnvName,
    #[serde(default)]
    pub action_noise_prob: f64,
    #[serde(default)]
    pub gridworld: GridWorldConfig,
}

impl EnvSpec {
    pub fn gridworld(slip_prob: f64) -> Self {
        Self {
            name: EnvName::Gridworld,
            action_noise_prob: 0.0,
            gridworld: GridWorldConfig {
                slip_prob,
                ..Default::default()
            },
        }
    }

    pub fn cartpole() -> Self {
        Self {
            name: EnvName::Cartpole,
            action_noise_prob: 0.0,
            gridworld: GridWorldConfig::default(),
        }
    }

    pub fn acrobot() -> Self {
        Self {
            name: EnvName::Acrobot,
            action_noise_prob: 0.0,
            gridworld: GridWorldConfig::default(),
        }
    }

    pub fn with_noise(mut self, prob: f64) -> Self {
        self.action_noise_prob = prob;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.action_noise_prob) {
            return Err(Error::config("env.action_noise_prob", "must lie in [0, 1]"));
        }
        if self.name == EnvName::Gridworld {
            self.gridworld.validate().map_err(|e| match e {
                Error::Config { path, message } => Error::config(format!("env.{path}"), message),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        self.validate()?;
        let base: Box<dyn Environment> = match self.name {
            EnvName::Gridworld => Box::new(GridWorld::new(self.gridworld.clone())?),
            EnvName::Cartpole => Box::new(CartPole::new()),
            EnvName::Acrobot => Box::new(Acrobot::new()),
        };
        if self.action_noise_prob > 0.0 {
            Ok(Box::new(ActionNoise::new(
                base,
                NoiseConfig {
                    action_noise_prob: self.action_noise_prob,
                },
            )?))
        } else {
            Ok(base)
        }
    }

    pub fn label(&self) -> String {
        let mut s = match self.name {
            EnvName::Gridworld => format!("gridworld-slip{}", self.gridworld.slip_prob),
            EnvName::Cartpole => "cartpole".to_string(),
            EnvName::Acrobot => "acrobot".to_string(),
        };
        if self.action_noise_prob > 0.0 {
            s.push_str(&format!("-noise{}", self.action_noise_prob));
        }
        s
    }

    /// Reference optimum used by the catastrophic-failure rule.
    pub fn optimal_reference(&self) -> Result<f64> {
        Ok(match self.name {
            EnvName::Gridworld => gridworld_optimal(&self.gridworld)?.start_value,
            EnvName::Cartpole => cartpole::MAX_STEPS as f64,
            EnvName::Acrobot => -100.0,
        })
    }

    /// Lowest achievable episode return.
    pub fn worst_return(&self) -> f64 {
        match self.name {
            EnvName::Gridworld => self.gridworld.step_penalty * self.gridworld.max_steps as f64,
            EnvName::Cartpole => 0.0,
            EnvName::Acrobot => -(acrobot::MAX_STEPS as f64),
        }
    }

    /// Return below which a run counts as a catastrophic failure.
    ///
    /// For positive optima this is half the optimum. For non-positive optima
    /// "half" is taken on the scale between the worst return and the optimum.
    pub fn failure_threshold(&self) -> Result<f64> {
        let opt = self.optimal_reference()?;
        Ok(if opt > 0.0 {
            0.5 * opt
        } else {
            let worst = self.worst_return();
            worst + 0.5 * (opt - worst)
        })
    }

    /// Whether an evaluation episode counts as reaching the goal.
    pub fn is_success(&self, episode_return: f64, terminal: bool) -> bool {
        match self.name {
            EnvName::Gridworld | EnvName::Acrobot => terminal,
            EnvName::Cartpole => episode_return >= cartpole::MAX_STEPS as f64,
        }
    }
}
