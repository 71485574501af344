//! Phase 1: K weak learners trained round-robin under the satisficing loss,
//! each with its own environment instance and private replay buffer.

use serde::{Deserialize, Serialize};

use crate::baseline::{Baseline, BaselineSnapshot};
use crate::envs::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::numerics::{argmax, AdamConfig, Checkpoint, MlpParams, Rng, Stream};
use crate::replay::Transition;
use crate::satcore::{sat_loss_and_grad, LearnerState, SatConfig};

/// Linear ε decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn value(&self, step: usize) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

pub fn epsilon_greedy(net: &MlpParams, state: &[f64], epsilon: f64, rng: &mut Rng) -> Result<usize> {
    if rng.bernoulli(epsilon) {
        Ok(rng.below(net.output_dim()))
    } else {
        Ok(argmax(&net.forward(state)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub k: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Minimum buffer size before gradient updates start.
    pub learning_starts: usize,
    pub adam: AdamConfig,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of each learner's step share over which ε decays.
    pub epsilon_decay_fraction: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            k: 4,
            hidden: vec![32],
            batch_size: 64,
            buffer_capacity: 10_000,
            learning_starts: 64,
            adam: AdamConfig::default(),
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
        }
    }
}

struct Slot {
    env: Box<dyn Environment>,
    env_rng: Rng,
    explore_rng: Rng,
    sample_rng: Rng,
    steps: usize,
}

pub struct WeakEnsemble {
    pub learners: Vec<LearnerState>,
    pub baseline: Baseline,
    pub sat: SatConfig,
    pub config: EnsembleConfig,
    slots: Vec<Slot>,
    baseline_rng: Rng,
    schedule: EpsilonSchedule,
    episodes: usize,
    env_steps: usize,
    updates: usize,
}

impl WeakEnsemble {
    /// `phase_budget` is the planned total environment steps across all
    /// learners; it only shapes the ε schedule.
    pub fn new(
        env: &EnvSpec,
        config: EnsembleConfig,
        sat: SatConfig,
        baseline: Baseline,
        phase_budget: usize,
        seed: u64,
    ) -> Result<Self> {
        if config.k == 0 {
            return Err(Error::config("k", "need at least one weak learner"));
        }
        sat.validate()?;
        let mut learners = Vec::with_capacity(config.k);
        let mut slots = Vec::with_capacity(config.k);
        for i in 0..config.k as u64 {
            let e = env.build()?;
            let mut sizes = vec![e.state_dim()];
            sizes.extend(&config.hidden);
            sizes.push(e.num_actions());
            let mut init = Rng::derive(seed, Stream::Init, i);
            let net = MlpParams::new(&sizes, &mut init)?;
            learners.push(LearnerState::new(net, config.adam, config.buffer_capacity));
            slots.push(Slot {
                env: e,
                env_rng: Rng::derive(seed, Stream::Env, i),
                explore_rng: Rng::derive(seed, Stream::Exploration, i),
                sample_rng: Rng::derive(seed, Stream::Sampling, i),
                steps: 0,
            });
        }
        let per_learner = phase_budget / config.k;
        let schedule = EpsilonSchedule {
            start: config.epsilon_start,
            end: config.epsilon_end,
            decay_steps: (per_learner as f64 * config.epsilon_decay_fraction) as usize,
        };
        Ok(Self {
            learners,
            baseline,
            sat,
            config,
            slots,
            baseline_rng: Rng::derive(seed, Stream::Sampling, 1_000),
            schedule,
            episodes: 0,
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.learners.len()
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// One round of Phase 1: every learner collects one ε-greedy episode,
    /// training once per environment step. Returns each learner's episode return.
    pub fn phase1_episode(&mut self) -> Result<Vec<f64>> {
        let mut returns = Vec::with_capacity(self.k());
        for i in 0..self.k() {
            let (ret, visited) = self.learner_episode(i)?;
            self.baseline
                .end_episode(&visited, ret, &mut self.baseline_rng)?;
            returns.push(ret);
        }
        self.episodes += 1;
        if self.episodes.is_multiple_of(self.sat.target_sync_interval) {
            for l in &mut self.learners {
                l.sync_target();
            }
        }
        Ok(returns)
    }

    fn learner_episode(&mut self, i: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let slot = &mut self.slots[i];
        let learner = &mut self.learners[i];
        let mut state = slot.env.reset(&mut slot.env_rng);
        let mut visited = vec![state.clone()];
        let mut total = 0.0;
        loop {
            learner.epsilon = self.schedule.value(slot.steps);
            let action = epsilon_greedy(&learner.online, &state, learner.epsilon, &mut slot.explore_rng)?;
            let step = slot.env.step(action, &mut slot.env_rng)?;
            slot.steps += 1;
            self.env_steps += 1;
            total += step.reward;
            learner.buffer.push(Transition {
                state: std::mem::take(&mut state),
                action,
                reward: step.reward,
                next_state: step.next_state.clone(),
                done: step.done && !step.truncated,
            });
            if learner.buffer.len() >= self.config.learning_starts {
                let batch = learner
                    .buffer
                    .sample(self.config.batch_size, &mut slot.sample_rng)?;
                let (_, grads) = sat_loss_and_grad(&batch, learner, &self.baseline, &self.sat)?;
                learner.opt.step(&mut learner.online, &grads)?;
                self.updates += 1;
            }
            state = step.next_state;
            if step.done {
                break;
            }
            visited.push(state.clone());
        }
        Ok((total, visited))
    }

    /// Mean of the K online networks' outputs.
    pub fn q_ens(&self, state: &[f64]) -> Result<Vec<f64>> {
        q_ens(self.learners.iter().map(|l| &l.online), state)
    }

    pub fn diversity<S: AsRef<[f64]>>(&self, states: &[S]) -> Result<f64> {
        let nets: Vec<&MlpParams> = self.learners.iter().map(|l| &l.online).collect();
        diversity(&nets, states)
    }

    pub fn online_nets(&self) -> Vec<&MlpParams> {
        self.learners.iter().map(|l| &l.online).collect()
    }

    pub fn weak_parameter_count(&self) -> usize {
        self.learners.iter().map(|l| l.online.count_parameters()).sum()
    }

    pub fn checkpoint(&self) -> Phase1Checkpoint {
        Phase1Checkpoint {
            schema_version: 1,
            learners: self.learners.iter().map(|l| l.online.to_checkpoint()).collect(),
            targets: self.learners.iter().map(|l| l.target.to_checkpoint()).collect(),
            baseline: self.baseline.snapshot(),
            buffer_sizes: self.learners.iter().map(|l| l.buffer.len()).collect(),
            rng_positions: self
                .slots
                .iter()
                .map(|s| {
                    [
                        s.env_rng.word_pos() as u64,
                        s.explore_rng.word_pos() as u64,
                        s.sample_rng.word_pos() as u64,
                    ]
                })
                .collect(),
            episodes: self.episodes,
            env_steps: self.env_steps,
        }
    }
}

/// Serialized end-of-Phase-1 state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Checkpoint {
    pub schema_version: u32,
    pub learners: Vec<Checkpoint>,
    pub targets: Vec<Checkpoint>,
    pub baseline: BaselineSnapshot,
    pub buffer_sizes: Vec<usize>,
    /// Per learner: env, exploration and sampling stream positions.
    pub rng_positions: Vec<[u64; 3]>,
    pub episodes: usize,
    pub env_steps: usize,
}

/// Per-action mean over `nets`.
pub fn q_ens<'a, I>(nets: I, state: &[f64]) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a MlpParams>,
{
    let mut sum: Option<Vec<f64>> = None;
    let mut k = 0usize;
    for net in nets {
        let q = net.forward(state)?;
        match &mut sum {
            None => sum = Some(q),
            Some(s) => {
                if s.len() != q.len() {
                    return Err(Error::Shape {
                        context: "ensemble member output",
                        expected: s.len(),
                        got: q.len(),
                    });
                }
                s.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
            }
        }
        k += 1;
    }
    let mut s = sum.ok_or_else(|| Error::Contract("empty ensemble".into()))?;
    s.iter_mut().for_each(|v| *v /= k as f64);
    Ok(s)
}

/// Mean over states and actions of the across-learner population standard
/// deviation of Q-values.
pub fn diversity<S: AsRef<[f64]>>(nets: &[&MlpParams], states: &[S]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Contract("diversity needs a nonempty probe batch".into()));
    }
    if nets.is_empty() {
        return Err(Error::Contract("empty ensemble".into()));
    }
    let k = nets.len() as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for s in states {
        let outs: Vec<Vec<f64>> = nets
            .iter()
            .map(|n| n.forward(s.as_ref()))
            .collect::<Result<_>>()?;
        for a in 0..outs[0].len() {
            let mean = outs.iter().map(|q| q[a]).sum::<f64>() / k;
            let var = outs.iter().map(|q| (q[a] - mean).powi(2)).sum::<f64>() / k;
            total += var.sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64)
}
