//! Slippery square grid: start top-left, goal bottom-right.

use serde::{Deserialize, Serialize};

use super::{EnvStepResult, Environment};
use crate::error::{Error, Result};
use crate::numerics::{argmax, Rng};

/// Action index → (d_row, d_col): up, right, down, left.
pub const MOVES: [(i64, i64); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorldConfig {
    pub size: usize,
    pub slip_prob: f64,
    pub step_penalty: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
}

impl Default for GridWorldConfig {
    fn default() -> Self {
        Self {
            size: 8,
            slip_prob: 0.2,
            step_penalty: -0.01,
            goal_reward: 1.0,
            max_steps: 200,
        }
    }
}

impl GridWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::config("gridworld.size", "need at least a 2x2 grid"));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::config("gridworld.slip_prob", "must lie in [0, 1)"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("gridworld.max_steps", "must be positive"));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.size * self.size
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn goal(&self) -> usize {
        self.n_cells() - 1
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.size + col
    }

    /// Deterministic effect of executing `mv` from `cell`; walls clamp.
    pub fn moved(&self, cell: usize, mv: usize) -> usize {
        let (r, c) = ((cell / self.size) as i64, (cell % self.size) as i64);
        let (dr, dc) = MOVES[mv];
        let max = self.size as i64 - 1;
        let nr = (r + dr).clamp(0, max);
        let nc = (c + dc).clamp(0, max);
        (nr * self.size as i64 + nc) as usize
    }

    pub fn reward(&self, next: usize) -> f64 {
        if next == self.goal() {
            self.step_penalty + self.goal_reward
        } else {
            self.step_penalty
        }
    }

    /// Transition kernel row P(· | cell, action), duplicates merged.
    pub fn transitions(&self, cell: usize, action: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(4);
        for mv in 0..4 {
            let p = if mv == action {
                1.0 - self.slip_prob
            } else {
                self.slip_prob / 3.0
            };
            if p == 0.0 {
                continue;
            }
            let next = self.moved(cell, mv);
            match out.iter_mut().find(|(n, _)| *n == next) {
                Some(entry) => entry.1 += p,
                None => out.push((next, p)),
            }
        }
        out
    }

    pub fn one_hot(&self, cell: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_cells()];
        v[cell] = 1.0;
        v
    }

    pub fn decode(&self, obs: &[f64]) -> usize {
        argmax(obs)
    }
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    config: GridWorldConfig,
    cell: usize,
    steps: usize,
    done: bool,
}

impl GridWorld {
    pub fn new(config: GridWorldConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            cell: config.start(),
            config,
            steps: 0,
            done: true,
        })
    }

    pub fn config(&self) -> &GridWorldConfig {
        &self.config
    }

    pub fn cell(&self) -> usize {
        self.cell
    }
}

impl Environment for GridWorld {
    fn state_dim(&self) -> usize {
        self.config.n_cells()
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn reset(&mut self, _rng: &mut Rng) -> Vec<f64> {
        self.cell = self.config.start();
        self.steps = 0;
        self.done = false;
        self.config.one_hot(self.cell)
    }

    fn step(&mut self, action: usize, rng: &mut Rng) -> Result<EnvStepResult> {
        if self.done {
            return Err(Error::Contract("gridworld stepped after episode end".into()));
        }
        if action >= 4 {
            return Err(Error::Contract(format!("gridworld action {action} out of range")));
        }
        let executed = if rng.bernoulli(self.config.slip_prob) {
            let k = rng.below(3);
            (action + 1 + k) % 4
        } else {
            action
        };
        self.cell = self.config.moved(self.cell, executed);
        self.steps += 1;
        let reward = self.config.reward(self.cell);
        let terminal = self.cell == self.config.goal();
        let truncated = !terminal && self.steps >= self.config.max_steps;
        self.done = terminal || truncated;
        Ok(EnvStepResult {
            next_state: self.config.one_hot(self.cell),
            reward,
            done: self.done,
            truncated,
        })
    }
}

/// Exact optimum of the undiscounted shortest-path problem.
#[derive(Debug, Clone)]
pub struct GridWorldOptimum {
    /// Optimal expected return from the start cell.
    pub start_value: f64,
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub sweeps: usize,
}

/// Value iteration on the true kernel until the sup-norm change is below 1e-10.
pub fn gridworld_optimal(config: &GridWorldConfig) -> Result<GridWorldOptimum> {
    const TOL: f64 = 1e-10;
    const MAX_SWEEPS: usize = 1_000_000;
    config.validate()?;
    let n = config.n_cells();
    let goal = config.goal();
    let kernel: Vec<Vec<Vec<(usize, f64)>>> = (0..n)
        .map(|s| (0..4).map(|a| config.transitions(s, a)).collect())
        .collect();
    let q_of = |values: &[f64], s: usize, a: usize| -> f64 {
        kernel[s][a]
            .iter()
            .map(|&(next, p)| {
                let cont = if next == goal { 0.0 } else { values[next] };
                p * (config.reward(next) + cont)
            })
            .sum()
    };

    let mut values = vec![0.0; n];
    for sweep in 1..=MAX_SWEEPS {
        let mut gap = 0.0f64;
        for s in 0..n {
            if s == goal {
                continue;
            }
            let best = (0..4)
                .map(|a| q_of(&values, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            gap = gap.max((best - values[s]).abs());
            values[s] = best;
        }
        if gap < TOL {
            let policy = (0..n)
                .map(|s| {
                    let qs: Vec<f64> = (0..4).map(|a| q_of(&values, s, a)).collect();
                    argmax(&qs)
                })
                .collect();
            return Ok(GridWorldOptimum {
                start_value: values[config.start()],
                values,
                policy,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "gridworld value iteration exceeded {MAX_SWEEPS} sweeps"
    )))
}
