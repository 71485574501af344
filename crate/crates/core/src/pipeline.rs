//! Phase 2 (distillation and Double-DQN polishing), the end-to-end
//! satisficing-ensemble run, and the single-network DQN / Double-DQN baselines.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{Baseline, EpisodicBaseline, LearnedBaseline, LearnedBaselineConfig};
use crate::ensemble::{epsilon_greedy, q_ens, EnsembleConfig, EpsilonSchedule, WeakEnsemble};
use crate::envs::{EnvName, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::numerics::{
    argmax, max_value, AdamConfig, AdamState, Gradients, MlpParams, Rng, Stream,
};
use crate::replay::{pool, PooledView, ReplayBuffer, Transition};
use crate::satcore::SatConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    SatEnq,
    Dqn,
    DoubleDqn,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::SatEnq => "sat_enq",
            Algorithm::Dqn => "dqn",
            Algorithm::DoubleDqn => "double_dqn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRule {
    Dqn,
    DoubleDqn,
}

/// `r + γ·max_a' Q⁻(s', a')`.
pub fn dqn_target(t: &Transition, target: &MlpParams, gamma: f64) -> Result<f64> {
    if t.done {
        return Ok(t.reward);
    }
    Ok(t.reward + gamma * max_value(&target.forward(&t.next_state)?))
}

/// `r + γ·Q⁻(s', argmax_a Q(s', a))`.
pub fn double_dqn_target(
    t: &Transition,
    online: &MlpParams,
    target: &MlpParams,
    gamma: f64,
) -> Result<f64> {
    if t.done {
        return Ok(t.reward);
    }
    let a_star = argmax(&online.forward(&t.next_state)?);
    Ok(t.reward + gamma * target.forward(&t.next_state)?[a_star])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdLoss {
    #[default]
    Mse,
    /// Quadratic within |δ| ≤ 1, linear outside (clipped TD-error gradient).
    Huber,
}

impl TdLoss {
    /// Loss value and its derivative with respect to the TD error δ = y − Q.
    fn eval(self, td: f64) -> (f64, f64) {
        match self {
            TdLoss::Mse => (td * td, 2.0 * td),
            TdLoss::Huber if td.abs() <= 1.0 => (0.5 * td * td, td),
            TdLoss::Huber => (td.abs() - 0.5, td.signum()),
        }
    }
}

/// Mean TD loss over the batch with constant targets.
pub fn td_loss_and_grad(
    batch: &[&Transition],
    online: &MlpParams,
    target: &MlpParams,
    gamma: f64,
    rule: TargetRule,
    kind: TdLoss,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = online.zero_gradients();
    let mut dout = vec![0.0; online.output_dim()];
    let mut loss = 0.0;
    for t in batch {
        let y = match rule {
            TargetRule::Dqn => dqn_target(t, target, gamma)?,
            TargetRule::DoubleDqn => double_dqn_target(t, online, target, gamma)?,
        };
        let trace = online.forward_trace(&t.state)?;
        let (l, dl) = kind.eval(y - trace.output()[t.action]);
        loss += l;
        dout.iter_mut().for_each(|d| *d = 0.0);
        dout[t.action] = -dl / n;
        online.accumulate_gradient(&trace, &dout, &mut grads)?;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("td loss".into()));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_starts: usize,
    /// Target sync period in environment steps.
    pub target_sync_steps: usize,
    pub loss: TdLoss,
    pub adam: AdamConfig,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_fraction: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            buffer_capacity: 20_000,
            learning_starts: 500,
            target_sync_steps: 100,
            loss: TdLoss::Mse,
            adam: AdamConfig::default(),
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
        }
    }
}

/// The large network: online and target copies, optimizer, polish buffer.
#[derive(Debug, Clone)]
pub struct StudentState {
    pub net: MlpParams,
    pub target: MlpParams,
    pub opt: AdamState,
    pub buffer: ReplayBuffer,
}

impl StudentState {
    pub fn new(net: MlpParams, adam: AdamConfig, buffer_capacity: usize) -> Self {
        Self {
            target: net.clone(),
            opt: AdamState::new(&net, adam),
            net,
            buffer: ReplayBuffer::new(buffer_capacity),
        }
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.net);
    }
}

/// Regresses the student onto the ensemble mean over pooled states.
/// Returns the per-step loss (before each update).
pub fn distill(
    student: &mut StudentState,
    pool: &PooledView,
    teachers: &[&MlpParams],
    steps: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::Contract("distillation pool is empty".into()));
    }
    let n_actions = student.net.output_dim();
    let mut curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch = pool.sample(batch_size, rng);
        let n = (batch.len() * n_actions) as f64;
        let mut grads = student.net.zero_gradients();
        let mut loss = 0.0;
        for t in &batch {
            let teacher = q_ens(teachers.iter().copied(), &t.state)?;
            let trace = student.net.forward_trace(&t.state)?;
            let dout: Vec<f64> = trace
                .output()
                .iter()
                .zip(&teacher)
                .map(|(q, y)| {
                    loss += (q - y) * (q - y);
                    2.0 * (q - y) / n
                })
                .collect();
            student.net.accumulate_gradient(&trace, &dout, &mut grads)?;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("distillation loss".into()));
        }
        student.opt.step(&mut student.net, &grads)?;
        curve.push(loss);
    }
    student.sync_target();
    Ok(curve)
}

/// ε-greedy (Double-)DQN training loop on one environment.
pub struct DqnTrainer<'a> {
    pub student: &'a mut StudentState,
    pub config: &'a DqnConfig,
    pub gamma: f64,
    pub rule: TargetRule,
    pub schedule: EpsilonSchedule,
    env: Box<dyn Environment>,
    env_rng: Rng,
    explore_rng: Rng,
    sample_rng: Rng,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub episode_returns: Vec<f64>,
    pub env_steps: usize,
    pub updates: usize,
    pub syncs: usize,
}

impl<'a> DqnTrainer<'a> {
    pub fn new(
        student: &'a mut StudentState,
        config: &'a DqnConfig,
        env: &EnvSpec,
        gamma: f64,
        rule: TargetRule,
        schedule: EpsilonSchedule,
        seed: u64,
        stream_index: u64,
    ) -> Result<Self> {
        Ok(Self {
            student,
            config,
            gamma,
            rule,
            schedule,
            env: env.build()?,
            env_rng: Rng::derive(seed, Stream::Env, stream_index),
            explore_rng: Rng::derive(seed, Stream::Exploration, stream_index),
            sample_rng: Rng::derive(seed, Stream::Sampling, stream_index),
        })
    }

    /// Runs exactly `steps` environment steps; a trailing partial episode is
    /// not recorded in the return curve.
    pub fn train(&mut self, steps: usize) -> Result<TrainLog> {
        let mut log = TrainLog::default();
        if steps == 0 {
            return Ok(log);
        }
        let mut state = self.env.reset(&mut self.env_rng);
        let mut ep_return = 0.0;
        for step in 0..steps {
            let eps = self.schedule.value(step);
            let action = epsilon_greedy(&self.student.net, &state, eps, &mut self.explore_rng)?;
            let out = self.env.step(action, &mut self.env_rng)?;
            ep_return += out.reward;
            log.env_steps += 1;
            self.student.buffer.push(Transition {
                state: std::mem::take(&mut state),
                action,
                reward: out.reward,
                next_state: out.next_state.clone(),
                done: out.done && !out.truncated,
            });
            if self.student.buffer.len() >= self.config.learning_starts.max(1) {
                let batch = self
                    .student
                    .buffer
                    .sample(self.config.batch_size, &mut self.sample_rng)?;
                let (_, grads) = td_loss_and_grad(
                    &batch,
                    &self.student.net,
                    &self.student.target,
                    self.gamma,
                    self.rule,
                    self.config.loss,
                )?;
                self.student.opt.step(&mut self.student.net, &grads)?;
                log.updates += 1;
            }
            if (step + 1) % self.config.target_sync_steps == 0 {
                self.student.sync_target();
                log.syncs += 1;
            }
            if out.done {
                log.episode_returns.push(ep_return);
                ep_return = 0.0;
                state = self.env.reset(&mut self.env_rng);
            } else {
                state = out.next_state;
            }
        }
        Ok(log)
    }
}

/// Standard Double DQN fine-tuning of a distilled student.
pub fn polish(
    student: &mut StudentState,
    config: &DqnConfig,
    env: &EnvSpec,
    gamma: f64,
    schedule: EpsilonSchedule,
    steps: usize,
    seed: u64,
) -> Result<TrainLog> {
    let mut trainer = DqnTrainer::new(
        student,
        config,
        env,
        gamma,
        TargetRule::DoubleDqn,
        schedule,
        seed,
        POLISH_STREAM,
    )?;
    trainer.train(steps)
}

const POLISH_STREAM: u64 = 100;
const BASELINE_RUN_STREAM: u64 = 200;
const STUDENT_INIT_STREAM: u64 = 100;
const DISTILL_STREAM: u64 = 101;
const BASELINE_NET_STREAM: u64 = 102;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub success_rate: f64,
}

/// Greedy rollouts with no exploration noise.
pub fn evaluate(net: &MlpParams, env: &EnvSpec, episodes: usize, rng: &mut Rng) -> Result<EvalResult> {
    let mut e = env.build()?;
    let mut returns = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    for _ in 0..episodes {
        let mut state = e.reset(rng);
        let mut total = 0.0;
        loop {
            let action = argmax(&net.forward(&state)?);
            let out = e.step(action, rng)?;
            total += out.reward;
            if out.done {
                if env.is_success(total, !out.truncated) {
                    successes += 1;
                }
                break;
            }
            state = out.next_state;
        }
        returns.push(total);
    }
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(EvalResult {
        returns,
        mean,
        std,
        success_rate: successes as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Tabular for GridWorld, learned network otherwise.
    #[default]
    Auto,
    Episodic,
    Learned,
}

/// How Phase-1 environment steps are charged against the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseAccounting {
    /// A Phase-1 step is one step of every learner, so each learner sees the
    /// whole Phase-1 share and the ensemble consumes K times as many
    /// environment steps (reported in `env_steps`).
    #[default]
    PerLearner,
    /// The Phase-1 share is split evenly between the learners.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Free-form label distinguishing ablation variants in reports.
    pub variant: Option<String>,
    pub env: EnvSpec,
    pub seed: u64,
    /// Total environment-step budget; `None` uses the environment default.
    pub total_steps: Option<usize>,
    /// Share of the budget spent in Phase 1.
    pub phase1_fraction: f64,
    pub phase1_accounting: PhaseAccounting,
    pub sat: SatConfig,
    pub ensemble: EnsembleConfig,
    pub baseline: BaselineKind,
    pub baseline_decay: f64,
    pub learned_baseline: LearnedBaselineConfig,
    pub student_hidden: Vec<usize>,
    pub distill_steps: usize,
    pub distill_batch: usize,
    /// When false the pipeline stops after distillation.
    pub polish: bool,
    pub dqn: DqnConfig,
    pub eval_episodes: usize,
    /// When positive, the final policy is also evaluated under this action noise.
    pub eval_action_noise: f64,
    pub diversity_probe: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::SatEnq,
            variant: None,
            env: EnvSpec::cartpole(),
            seed: 0,
            total_steps: None,
            phase1_fraction: 0.5,
            phase1_accounting: PhaseAccounting::PerLearner,
            sat: SatConfig::default(),
            ensemble: EnsembleConfig::default(),
            baseline: BaselineKind::Auto,
            baseline_decay: 0.99,
            learned_baseline: LearnedBaselineConfig::default(),
            student_hidden: vec![64, 64],
            distill_steps: 2_000,
            distill_batch: 64,
            polish: true,
            dqn: DqnConfig::default(),
            eval_episodes: 100,
            eval_action_noise: 0.0,
            diversity_probe: 256,
        }
    }
}

impl RunConfig {
    pub fn budget(&self) -> usize {
        self.total_steps.unwrap_or(match self.env.name {
            EnvName::Gridworld => 10_000,
            EnvName::Cartpole | EnvName::Acrobot => 20_000,
        })
    }

    pub fn label(&self) -> String {
        match &self.variant {
            Some(v) => format!("{}:{}", self.algorithm.as_str(), v),
            None => self.algorithm.as_str().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sat.validate()?;
        if self.budget() == 0 {
            return Err(Error::config("total_steps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.phase1_fraction) || self.phase1_fraction == 0.0 {
            return Err(Error::config("phase1_fraction", "must lie in (0, 1]"));
        }
        if self.ensemble.k == 0 {
            return Err(Error::config("ensemble.k", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.baseline_decay) {
            return Err(Error::config("baseline_decay", "must lie in [0, 1]"));
        }
        for (path, v) in [
            ("dqn.batch_size", self.dqn.batch_size),
            ("ensemble.batch_size", self.ensemble.batch_size),
            ("distill_batch", self.distill_batch),
        ] {
            if v == 0 {
                return Err(Error::config(path, "must be positive"));
            }
        }
        if self.dqn.target_sync_steps == 0 {
            return Err(Error::config("dqn.target_sync_steps", "must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eval_action_noise) {
            return Err(Error::config("eval_action_noise", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn layer_sizes(&self, hidden: &[usize]) -> Result<Vec<usize>> {
        let e = self.env.build()?;
        let mut sizes = vec![e.state_dim()];
        sizes.extend(hidden);
        sizes.push(e.num_actions());
        Ok(sizes)
    }

    pub fn student_sizes(&self) -> Result<Vec<usize>> {
        self.layer_sizes(&self.student_hidden)
    }

    pub fn weak_sizes(&self) -> Result<Vec<usize>> {
        self.layer_sizes(&self.ensemble.hidden)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub student: usize,
    pub weak_total: usize,
    pub baseline: usize,
    /// (weak + baseline + student) / student.
    pub ratio: f64,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Per-run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub algorithm: String,
    pub env: String,
    /// NaN (stored as null) when the run crashed before evaluation.
    #[serde(with = "nan_as_null")]
    pub eval_return_mean: f64,
    #[serde(with = "nan_as_null")]
    pub eval_return_std: f64,
    pub eval_success_rate: f64,
    pub noisy_eval_return_mean: Option<f64>,
    pub training_returns: Vec<f64>,
    pub failed: bool,
    pub error: Option<String>,
    pub failure_threshold: f64,
    pub env_steps: usize,
    pub wall_time_s: f64,
    pub parameters: ParameterCounts,
    pub diversity: Option<f64>,
    pub distill_loss_first: Option<f64>,
    pub distill_loss_last: Option<f64>,
    pub phase1_episodes: Option<usize>,
}

pub struct RunOutcome {
    pub metrics: RunMetrics,
    /// Final greedy policy network, absent if the run crashed.
    pub policy: Option<MlpParams>,
    /// Weak-learner checksums at the end of Phase 1 and after Phase 2.
    pub weak_checksums: Option<(Vec<u64>, Vec<u64>)>,
}

fn make_baseline(cfg: &RunConfig, state_dim: usize) -> Result<Baseline> {
    let kind = match (cfg.baseline, cfg.env.name) {
        (BaselineKind::Auto, EnvName::Gridworld) | (BaselineKind::Episodic, _) => {
            BaselineKind::Episodic
        }
        _ => BaselineKind::Learned,
    };
    Ok(match kind {
        BaselineKind::Episodic => Baseline::Episodic(EpisodicBaseline::new(cfg.baseline_decay, 0.0)?),
        _ => {
            let mut rng = Rng::derive(cfg.seed, Stream::Init, BASELINE_NET_STREAM);
            Baseline::Learned(LearnedBaseline::new(state_dim, cfg.learned_baseline, &mut rng)?)
        }
    })
}

struct Evaluated {
    clean: EvalResult,
    noisy: Option<f64>,
}

fn evaluate_policy(cfg: &RunConfig, net: &MlpParams) -> Result<Evaluated> {
    let mut rng = Rng::derive(cfg.seed, Stream::Eval, 0);
    let clean = evaluate(net, &cfg.env, cfg.eval_episodes, &mut rng)?;
    let noisy = if cfg.eval_action_noise > 0.0 {
        let mut rng = Rng::derive(cfg.seed, Stream::Eval, 0);
        let spec = cfg.env.clone().with_noise(cfg.eval_action_noise);
        Some(evaluate(net, &spec, cfg.eval_episodes, &mut rng)?.mean)
    } else {
        None
    };
    Ok(Evaluated { clean, noisy })
}

fn blank_metrics(cfg: &RunConfig, threshold: f64) -> RunMetrics {
    RunMetrics {
        seed: cfg.seed,
        algorithm: cfg.label(),
        env: cfg.env.label(),
        eval_return_mean: f64::NAN,
        eval_return_std: f64::NAN,
        eval_success_rate: 0.0,
        noisy_eval_return_mean: None,
        training_returns: Vec::new(),
        failed: true,
        error: None,
        failure_threshold: threshold,
        env_steps: 0,
        wall_time_s: 0.0,
        parameters: ParameterCounts::default(),
        diversity: None,
        distill_loss_first: None,
        distill_loss_last: None,
        phase1_episodes: None,
    }
}

fn finish(metrics: &mut RunMetrics, eval: Evaluated) {
    metrics.eval_return_mean = eval.clean.mean;
    metrics.eval_return_std = eval.clean.std;
    metrics.eval_success_rate = eval.clean.success_rate;
    metrics.noisy_eval_return_mean = eval.noisy;
    metrics.failed = !(eval.clean.mean >= metrics.failure_threshold);
}

/// Full two-phase run. Errors inside the run become a failed record.
pub fn run_sat_enq(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let threshold = cfg.env.failure_threshold()?;
    let start = Instant::now();
    let mut metrics = blank_metrics(cfg, threshold);
    match sat_enq_inner(cfg, &mut metrics) {
        Ok((policy, sums)) => {
            metrics.wall_time_s = start.elapsed().as_secs_f64();
            Ok(RunOutcome {
                metrics,
                policy: Some(policy),
                weak_checksums: Some(sums),
            })
        }
        Err(e) => {
            metrics.failed = true;
            metrics.error = Some(e.to_string());
            metrics.wall_time_s = start.elapsed().as_secs_f64();
            Ok(RunOutcome {
                metrics,
                policy: None,
                weak_checksums: None,
            })
        }
    }
}

fn sat_enq_inner(cfg: &RunConfig, metrics: &mut RunMetrics) -> Result<(MlpParams, (Vec<u64>, Vec<u64>))> {
    let budget = cfg.budget();
    let phase1_share = ((budget as f64) * cfg.phase1_fraction).round() as usize;
    let k = cfg.ensemble.k;
    let (phase1_budget, charge): (usize, fn(usize, usize) -> usize) = match cfg.phase1_accounting {
        PhaseAccounting::PerLearner => (phase1_share * k, |steps, k| steps / k),
        PhaseAccounting::Shared => (phase1_share, |steps, _| steps),
    };
    let student_sizes = cfg.student_sizes()?;
    let state_dim = student_sizes[0];

    // Phase 1.
    let baseline = make_baseline(cfg, state_dim)?;
    let mut ens = WeakEnsemble::new(
        &cfg.env,
        cfg.ensemble.clone(),
        cfg.sat,
        baseline,
        phase1_budget,
        cfg.seed,
    )?;
    let mut curve = Vec::new();
    while ens.env_steps() < phase1_budget {
        let returns = ens.phase1_episode()?;
        curve.push(returns.iter().sum::<f64>() / returns.len() as f64);
    }
    let phase1_sums: Vec<u64> = ens.learners.iter().map(|l| l.online.checksum()).collect();
    metrics.phase1_episodes = Some(ens.episodes());

    // Phase 2: distill.
    let pooled = pool(ens.learners.iter().map(|l| &l.buffer))?;
    let teachers = ens.online_nets();
    let mut probe_rng = Rng::derive(cfg.seed, Stream::Sampling, DISTILL_STREAM + 1);
    let probe: Vec<&[f64]> = pooled
        .sample(cfg.diversity_probe.max(1), &mut probe_rng)
        .into_iter()
        .map(|t| t.state.as_slice())
        .collect();
    metrics.diversity = Some(crate::ensemble::diversity(&teachers, &probe)?);

    let mut init_rng = Rng::derive(cfg.seed, Stream::Init, STUDENT_INIT_STREAM);
    let net = MlpParams::new(&student_sizes, &mut init_rng)?;
    let mut student = StudentState::new(net, cfg.dqn.adam, cfg.dqn.buffer_capacity);
    let mut distill_rng = Rng::derive(cfg.seed, Stream::Sampling, DISTILL_STREAM);
    let losses = distill(
        &mut student,
        &pooled,
        &teachers,
        cfg.distill_steps,
        cfg.distill_batch,
        &mut distill_rng,
    )?;
    metrics.distill_loss_first = losses.first().copied();
    metrics.distill_loss_last = losses.last().copied();

    // Phase 2: polish.
    let polish_steps = if cfg.polish {
        budget.saturating_sub(charge(ens.env_steps(), k))
    } else {
        0
    };
    let schedule = EpsilonSchedule {
        start: cfg.dqn.epsilon_start,
        end: cfg.dqn.epsilon_end,
        decay_steps: (polish_steps as f64 * cfg.dqn.epsilon_decay_fraction) as usize,
    };
    let log = polish(
        &mut student,
        &cfg.dqn,
        &cfg.env,
        cfg.sat.gamma,
        schedule,
        polish_steps,
        cfg.seed,
    )?;
    curve.extend(&log.episode_returns);
    let phase2_sums: Vec<u64> = ens.learners.iter().map(|l| l.online.checksum()).collect();

    let weak_total = ens.weak_parameter_count();
    let baseline_params = ens.baseline.parameter_count();
    let student_params = student.net.count_parameters();
    metrics.parameters = ParameterCounts {
        student: student_params,
        weak_total,
        baseline: baseline_params,
        ratio: (weak_total + baseline_params + student_params) as f64 / student_params as f64,
    };
    metrics.env_steps = ens.env_steps() + log.env_steps;
    metrics.training_returns = curve;

    let eval = evaluate_policy(cfg, &student.net)?;
    finish(metrics, eval);
    Ok((student.net, (phase1_sums, phase2_sums)))
}

/// Single student-sized network trained with DQN or Double DQN on the full budget.
pub fn run_baseline(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let rule = match cfg.algorithm {
        Algorithm::Dqn => TargetRule::Dqn,
        Algorithm::DoubleDqn => TargetRule::DoubleDqn,
        Algorithm::SatEnq => {
            return Err(Error::config("algorithm", "run_baseline needs dqn or double_dqn"))
        }
    };
    let threshold = cfg.env.failure_threshold()?;
    let start = Instant::now();
    let mut metrics = blank_metrics(cfg, threshold);
    let result = (|| -> Result<MlpParams> {
        let sizes = cfg.student_sizes()?;
        let mut init_rng = Rng::derive(cfg.seed, Stream::Init, STUDENT_INIT_STREAM);
        let net = MlpParams::new(&sizes, &mut init_rng)?;
        let mut student = StudentState::new(net, cfg.dqn.adam, cfg.dqn.buffer_capacity);
        let budget = cfg.budget();
        let schedule = EpsilonSchedule {
            start: cfg.dqn.epsilon_start,
            end: cfg.dqn.epsilon_end,
            decay_steps: (budget as f64 * cfg.dqn.epsilon_decay_fraction) as usize,
        };
        let mut trainer = DqnTrainer::new(
            &mut student,
            &cfg.dqn,
            &cfg.env,
            cfg.sat.gamma,
            rule,
            schedule,
            cfg.seed,
            BASELINE_RUN_STREAM,
        )?;
        let log = trainer.train(budget)?;
        let params = student.net.count_parameters();
        metrics.parameters = ParameterCounts {
            student: params,
            weak_total: 0,
            baseline: 0,
            ratio: 1.0,
        };
        metrics.env_steps = log.env_steps;
        metrics.training_returns = log.episode_returns;
        let eval = evaluate_policy(cfg, &student.net)?;
        finish(&mut metrics, eval);
        Ok(student.net)
    })();
    metrics.wall_time_s = start.elapsed().as_secs_f64();
    match result {
        Ok(net) => Ok(RunOutcome {
            metrics,
            policy: Some(net),
            weak_checksums: None,
        }),
        Err(e) => {
            metrics.failed = true;
            metrics.error = Some(e.to_string());
            Ok(RunOutcome {
                metrics,
                policy: None,
                weak_checksums: None,
            })
        }
    }
}

/// Dispatches on `cfg.algorithm`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    match cfg.algorithm {
        Algorithm::SatEnq => run_sat_enq(cfg),
        Algorithm::Dqn | Algorithm::DoubleDqn => run_baseline(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_net(outputs: &[f64], in_dim: usize) -> MlpParams {
        let mut p = MlpParams::zeros(&[in_dim, outputs.len()]).unwrap();
        p.layers_mut()[0].biases = outputs.to_vec();
        p
    }

    fn random_batch(rng: &mut Rng, n: usize, dim: usize, n_actions: usize) -> Vec<Transition> {
        (0..n)
            .map(|i| Transition {
                state: (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
                action: i % n_actions,
                reward: rng.uniform_range(-1.0, 1.0),
                next_state: (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
                done: i % 7 == 6,
            })
            .collect()
    }

    #[test]
    fn identical_nets_make_double_equal_single() {
        let mut rng = Rng::new(1);
        let net = MlpParams::new(&[3, 8, 3], &mut rng).unwrap();
        for t in random_batch(&mut rng, 20, 3, 3) {
            let a = dqn_target(&t, &net, 0.9).unwrap();
            let b = double_dqn_target(&t, &net, &net, 0.9).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn double_target_uses_online_argmax() {
        let mut rng = Rng::new(2);
        let online = MlpParams::new(&[3, 8, 3], &mut rng).unwrap();
        let target = MlpParams::new(&[3, 8, 3], &mut rng).unwrap();
        for t in random_batch(&mut rng, 30, 3, 3) {
            let got = double_dqn_target(&t, &online, &target, 0.97).unwrap();
            let want = if t.done {
                t.reward
            } else {
                let qo = online.forward(&t.next_state).unwrap();
                let mut best = 0;
                for a in 1..qo.len() {
                    if qo[a] > qo[best] {
                        best = a;
                    }
                }
                t.reward + 0.97 * target.forward(&t.next_state).unwrap()[best]
            };
            assert_eq!(got, want);
        }
    }

    #[test]
    fn zero_discount_targets_are_rewards() {
        let mut rng = Rng::new(3);
        let net = MlpParams::new(&[3, 4, 2], &mut rng).unwrap();
        for t in random_batch(&mut rng, 10, 3, 2) {
            assert_eq!(double_dqn_target(&t, &net, &net, 0.0).unwrap(), t.reward);
        }
    }

    #[test]
    fn dqn_and_double_differ_only_in_target() {
        let online = constant_net(&[1.0, 5.0], 1);
        let target = constant_net(&[4.0, 2.0], 1);
        let t = Transition {
            state: vec![0.0],
            action: 0,
            reward: 0.0,
            next_state: vec![0.0],
            done: false,
        };
        assert_eq!(dqn_target(&t, &target, 1.0 - 1e-9).unwrap(), 4.0 * (1.0 - 1e-9));
        assert_eq!(double_dqn_target(&t, &online, &target, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn distill_identity_has_zero_loss() {
        let mut rng = Rng::new(4);
        let teacher = MlpParams::new(&[3, 8, 2], &mut rng).unwrap();
        let mut student = StudentState::new(teacher.clone(), AdamConfig::default(), 10);
        let mut buf = ReplayBuffer::new(50);
        for t in random_batch(&mut rng, 50, 3, 2) {
            buf.push(t);
        }
        let view = pool([&buf]).unwrap();
        let curve = distill(&mut student, &view, &[&teacher], 20, 16, &mut rng).unwrap();
        assert!(curve.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn distill_converges_to_constant_teacher() {
        let mut rng = Rng::new(5);
        let teacher = constant_net(&[1.5, -0.5], 3);
        let net = MlpParams::new(&[3, 16, 16, 2], &mut rng).unwrap();
        let mut student = StudentState::new(net, AdamConfig::default(), 10);
        let mut buf = ReplayBuffer::new(200);
        for t in random_batch(&mut rng, 200, 3, 2) {
            buf.push(t);
        }
        let view = pool([&buf]).unwrap();
        let curve = distill(&mut student, &view, &[&teacher], 3_000, 32, &mut rng).unwrap();
        assert!(*curve.last().unwrap() < 1e-3, "{}", curve.last().unwrap());
        let w = curve.len() / 10;
        let first: f64 = curve[..w].iter().sum::<f64>() / w as f64;
        let last: f64 = curve[curve.len() - w..].iter().sum::<f64>() / w as f64;
        assert!(last < first);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.sat.margin, 0.5);
        assert_eq!(cfg.sat.hinge_weight, 0.1);
        assert_eq!(cfg.sat.gamma, 0.99);
        assert_eq!(cfg.ensemble.k, 4);
        assert_eq!(cfg.baseline_decay, 0.99);
        assert_eq!(cfg.budget(), 20_000);
        assert!(cfg.validate().is_ok());
        let bad = RunConfig {
            phase1_fraction: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn short_sat_enq_run_is_reproducible() {
        let cfg = RunConfig {
            env: EnvSpec::gridworld(0.2),
            total_steps: Some(600),
            distill_steps: 20,
            eval_episodes: 3,
            diversity_probe: 16,
            ..Default::default()
        };
        let a = run_sat_enq(&cfg).unwrap();
        let b = run_sat_enq(&cfg).unwrap();
        assert!(a.metrics.error.is_none(), "{:?}", a.metrics.error);
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.metrics.training_returns, b.metrics.training_returns);
        let (p1, p2) = a.weak_checksums.unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn no_polish_stops_after_distillation() {
        let cfg = RunConfig {
            env: EnvSpec::gridworld(0.2),
            total_steps: Some(600),
            distill_steps: 10,
            eval_episodes: 2,
            polish: false,
            ..Default::default()
        };
        // A round of K episodes may overrun the phase budget by at most K·max_steps.
        let out = run_sat_enq(&cfg).unwrap();
        let phase1 = out.metrics.env_steps;
        assert!((4 * 300..4 * 300 + 4 * 200).contains(&phase1), "{phase1}");

        let shared = RunConfig {
            phase1_accounting: PhaseAccounting::Shared,
            ..cfg
        };
        let phase1 = run_sat_enq(&shared).unwrap().metrics.env_steps;
        assert!((300..300 + 4 * 200).contains(&phase1), "{phase1}");
    }
}
