//! Dynamic aspiration level B(s).
//!
//! Two variants: a table of per-state exponential moving averages of episode
//! returns, and a small regression network fitted to Monte Carlo returns.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Checkpoint, Gradients, MlpParams, Rng};

/// Exact key of a discrete observation (FNV-1a over the f64 bit patterns).
pub fn state_key(obs: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in obs {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicBaseline {
    table: HashMap<u64, f64>,
    decay: f64,
    default: f64,
}

impl EpisodicBaseline {
    pub fn new(decay: f64, default: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::config("baseline.decay", "must lie in [0, 1]"));
        }
        Ok(Self {
            table: HashMap::new(),
            decay,
            default,
        })
    }

    pub fn query(&self, state: &[f64]) -> f64 {
        self.table
            .get(&state_key(state))
            .copied()
            .unwrap_or(self.default)
    }

    /// First-visit update: each distinct state moves once toward `episode_return`.
    pub fn update_episodic<S: AsRef<[f64]>>(&mut self, visited: &[S], episode_return: f64) {
        let mut seen = HashSet::new();
        for s in visited {
            let key = state_key(s.as_ref());
            if !seen.insert(key) {
                continue;
            }
            let b = self.table.entry(key).or_insert(self.default);
            *b = self.decay * *b + (1.0 - self.decay) * episode_return;
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnedBaselineConfig {
    pub hidden: usize,
    pub capacity: usize,
    pub batch_size: usize,
    /// Gradient steps taken after each recorded episode.
    pub steps_per_episode: usize,
    pub lr: f64,
}

impl Default for LearnedBaselineConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            capacity: 5_000,
            batch_size: 64,
            steps_per_episode: 1,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnedBaseline {
    net: MlpParams,
    opt: AdamState,
    config: LearnedBaselineConfig,
    recent: VecDeque<(Vec<f64>, f64)>,
}

impl LearnedBaseline {
    pub fn new(state_dim: usize, config: LearnedBaselineConfig, rng: &mut Rng) -> Result<Self> {
        let net = MlpParams::new(&[state_dim, config.hidden, 1], rng)?;
        Ok(Self::from_net(net, config))
    }

    pub fn from_net(net: MlpParams, config: LearnedBaselineConfig) -> Self {
        let opt = AdamState::new(
            &net,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        Self {
            net,
            opt,
            config,
            recent: VecDeque::new(),
        }
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn query(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.forward(state)?[0])
    }

    /// Mean squared error over `(state, return)` pairs and its gradient.
    pub fn loss_and_grad(&self, batch: &[(&[f64], f64)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty baseline batch".into()));
        }
        let n = batch.len() as f64;
        let mut grads = self.net.zero_gradients();
        let mut loss = 0.0;
        for &(s, g) in batch {
            let trace = self.net.forward_trace(s)?;
            let err = trace.output()[0] - g;
            loss += err * err;
            self.net
                .accumulate_gradient(&trace, &[2.0 * err / n], &mut grads)?;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("baseline loss".into()));
        }
        Ok((loss, grads))
    }

    /// One Adam step on the batch; returns the loss before the step.
    pub fn train_learned(&mut self, batch: &[(&[f64], f64)]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(batch)?;
        self.opt.step(&mut self.net, &grads)?;
        Ok(loss)
    }

    /// Stores every visited state with the episode return, then trains on
    /// a sample of recent pairs.
    pub fn record_episode<S: AsRef<[f64]>>(
        &mut self,
        visited: &[S],
        episode_return: f64,
        rng: &mut Rng,
    ) -> Result<Option<f64>> {
        if !episode_return.is_finite() {
            return Err(Error::NonFinite("episode return".into()));
        }
        for s in visited {
            if self.recent.len() == self.config.capacity {
                self.recent.pop_front();
            }
            self.recent.push_back((s.as_ref().to_vec(), episode_return));
        }
        if self.recent.is_empty() {
            return Ok(None);
        }
        let mut last = None;
        for _ in 0..self.config.steps_per_episode {
            let batch: Vec<(&[f64], f64)> = (0..self.config.batch_size)
                .map(|_| {
                    let (s, g) = &self.recent[rng.below(self.recent.len())];
                    (s.as_slice(), *g)
                })
                .collect();
            let (loss, grads) = self.loss_and_grad(&batch)?;
            self.opt.step(&mut self.net, &grads)?;
            last = Some(loss);
        }
        Ok(last)
    }
}

/// Either baseline variant behind one query/update surface.
#[derive(Debug, Clone)]
pub enum Baseline {
    Episodic(EpisodicBaseline),
    Learned(LearnedBaseline),
}

impl Baseline {
    pub fn query(&self, state: &[f64]) -> Result<f64> {
        match self {
            Baseline::Episodic(b) => Ok(b.query(state)),
            Baseline::Learned(b) => b.query(state),
        }
    }

    /// End-of-episode update with the episode's undiscounted return.
    pub fn end_episode<S: AsRef<[f64]>>(
        &mut self,
        visited: &[S],
        episode_return: f64,
        rng: &mut Rng,
    ) -> Result<()> {
        if !episode_return.is_finite() {
            return Err(Error::NonFinite("episode return".into()));
        }
        match self {
            Baseline::Episodic(b) => b.update_episodic(visited, episode_return),
            Baseline::Learned(b) => {
                b.record_episode(visited, episode_return, rng)?;
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Baseline::Episodic(_) => 0,
            Baseline::Learned(b) => b.net.count_parameters(),
        }
    }

    pub fn snapshot(&self) -> BaselineSnapshot {
        match self {
            Baseline::Episodic(b) => {
                let mut table: Vec<(u64, f64)> = b.table.iter().map(|(k, v)| (*k, *v)).collect();
                table.sort_by_key(|e| e.0);
                BaselineSnapshot::Episodic {
                    decay: b.decay,
                    default: b.default,
                    table,
                }
            }
            Baseline::Learned(b) => BaselineSnapshot::Learned {
                net: b.net.to_checkpoint(),
            },
        }
    }
}

/// Serializable baseline state for Phase-1 checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSnapshot {
    Episodic {
        decay: f64,
        default: f64,
        table: Vec<(u64, f64)>,
    },
    Learned {
        net: Checkpoint,
    },
}
