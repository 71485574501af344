//! Satisficing TD targets, the weak-learner loss, and target-network mechanics.
//!
//! The bootstrapped next-state value is clipped at the aspiration level:
//! `r + γ·min{max_a' Q⁻(s', a'), B(s') + m}`. The weak-learner loss adds a
//! squared hinge on `B(s) + m − Q(s, a)` weighted by λ.

use serde::{Deserialize, Serialize};

use crate::baseline::Baseline;
use crate::error::{Error, Result};
use crate::numerics::{max_value, AdamConfig, AdamState, Gradients, MlpParams};
use crate::replay::{ReplayBuffer, Transition};

/// Which side of the threshold the hinge penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeDirection {
    /// `ReLU(B(s) + m − Q(s,a))²`: penalizes Q below the threshold.
    #[default]
    Below,
    /// `ReLU(Q(s,a) − B(s) − m)²`: penalizes Q above the threshold.
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatConfig {
    pub margin: f64,
    pub hinge_weight: f64,
    pub gamma: f64,
    /// Target sync period, in episodes.
    pub target_sync_interval: usize,
    pub hinge_direction: HingeDirection,
    /// When false the target is the unclipped max and the hinge is dropped.
    pub satisficing: bool,
}

impl Default for SatConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            hinge_weight: 0.1,
            gamma: 0.99,
            target_sync_interval: 10,
            hinge_direction: HingeDirection::Below,
            satisficing: true,
        }
    }
}

impl SatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::config("sat.margin", "must be >= 0"));
        }
        if !(self.hinge_weight >= 0.0) {
            return Err(Error::config("sat.hinge_weight", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("sat.gamma", "must lie in [0, 1)"));
        }
        if self.target_sync_interval == 0 {
            return Err(Error::config("sat.target_sync_interval", "must be positive"));
        }
        Ok(())
    }
}

/// Sample-form satisficing target from precomputed pieces.
#[inline]
pub fn clipped_target(
    reward: f64,
    done: bool,
    next_max_q: f64,
    next_baseline: f64,
    cfg: &SatConfig,
) -> f64 {
    if done {
        return reward;
    }
    let bootstrap = if cfg.satisficing {
        next_max_q.min(next_baseline + cfg.margin)
    } else {
        next_max_q
    };
    reward + cfg.gamma * bootstrap
}

/// `r + γ·min{max_a' Q⁻(s',a'), B(s')+m}`, or `r` on terminal transitions.
pub fn sat_target(
    t: &Transition,
    target_net: &MlpParams,
    baseline: &Baseline,
    cfg: &SatConfig,
) -> Result<f64> {
    if t.done {
        return Ok(t.reward);
    }
    let q_next = target_net.forward(&t.next_state)?;
    let max_q = max_value(&q_next);
    if !max_q.is_finite() {
        return Err(Error::NonFinite("target network output".into()));
    }
    let b = baseline.query(&t.next_state)?;
    Ok(clipped_target(t.reward, false, max_q, b, cfg))
}

/// One weak learner: online and target networks, optimizer, private buffer.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub online: MlpParams,
    pub target: MlpParams,
    pub opt: AdamState,
    pub buffer: ReplayBuffer,
    pub epsilon: f64,
    pub syncs: usize,
}

impl LearnerState {
    pub fn new(online: MlpParams, adam: AdamConfig, buffer_capacity: usize) -> Self {
        let opt = AdamState::new(&online, adam);
        Self {
            target: online.clone(),
            online,
            opt,
            buffer: ReplayBuffer::new(buffer_capacity),
            epsilon: 1.0,
            syncs: 0,
        }
    }

    /// θ⁻ ← θ.
    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
        self.syncs += 1;
    }
}

/// Mean over the batch of `(y − Q(s,a))² + λ·hinge²`, with `y` held constant.
pub fn sat_loss_and_grad(
    batch: &[&Transition],
    learner: &LearnerState,
    baseline: &Baseline,
    cfg: &SatConfig,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let n = batch.len() as f64;
    let n_actions = learner.online.output_dim();
    let mut grads = learner.online.zero_gradients();
    let mut loss = 0.0;
    let mut dout = vec![0.0; n_actions];
    for t in batch {
        let y = sat_target(t, &learner.target, baseline, cfg)?;
        let trace = learner.online.forward_trace(&t.state)?;
        let q = trace.output()[t.action];
        let td = y - q;
        let mut dq = -2.0 * td;
        loss += td * td;
        if cfg.satisficing && cfg.hinge_weight > 0.0 {
            let threshold = baseline.query(&t.state)? + cfg.margin;
            match cfg.hinge_direction {
                HingeDirection::Below => {
                    let h = (threshold - q).max(0.0);
                    loss += cfg.hinge_weight * h * h;
                    dq -= 2.0 * cfg.hinge_weight * h;
                }
                HingeDirection::Above => {
                    let h = (q - threshold).max(0.0);
                    loss += cfg.hinge_weight * h * h;
                    dq += 2.0 * cfg.hinge_weight * h;
                }
            }
        }
        dout.iter_mut().for_each(|d| *d = 0.0);
        dout[t.action] = dq / n;
        learner
            .online
            .accumulate_gradient(&trace, &dout, &mut grads)?;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("satisficing loss".into()));
    }
    Ok((loss, grads))
}

/// Finite MDP with explicit kernel: `p[(s·A + a)·S + s']`, `r[s·A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        if p.len() != n_states * n_actions * n_states {
            return Err(Error::Shape {
                context: "mdp kernel",
                expected: n_states * n_actions * n_states,
                got: p.len(),
            });
        }
        if r.len() != n_states * n_actions {
            return Err(Error::Shape {
                context: "mdp rewards",
                expected: n_states * n_actions,
                got: r.len(),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            p,
            r,
        })
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + next]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.r.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// One exact application of the satisficing operator. `q` is indexed
/// `s·A + a`, `baseline` by state.
pub fn tabular_sat_backup(
    mdp: &TabularMdp,
    q: &[f64],
    baseline: &[f64],
    cfg: &SatConfig,
) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if q.len() != ns * na {
        return Err(Error::Shape {
            context: "tabular Q",
            expected: ns * na,
            got: q.len(),
        });
    }
    if baseline.len() != ns {
        return Err(Error::Shape {
            context: "tabular baseline",
            expected: ns,
            got: baseline.len(),
        });
    }
    let clipped_next: Vec<f64> = (0..ns)
        .map(|s| {
            let m = max_value(&q[s * na..(s + 1) * na]);
            if cfg.satisficing {
                m.min(baseline[s] + cfg.margin)
            } else {
                m
            }
        })
        .collect();
    let mut out = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let row = &mdp.p[(s * na + a) * ns..(s * na + a + 1) * ns];
            let expect: f64 = row.iter().zip(&clipped_next).map(|(p, v)| p * v).sum();
            out[s * na + a] = mdp.reward(s, a) + cfg.gamma * expect;
        }
    }
    Ok(out)
}

pub fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::EpisodicBaseline;
    use crate::numerics::Rng;

    fn const_baseline(v: f64) -> Baseline {
        Baseline::Episodic(EpisodicBaseline::new(0.99, v).unwrap())
    }

    /// Single-layer net whose outputs are exactly `biases` for any input.
    fn constant_net(outputs: &[f64], in_dim: usize) -> MlpParams {
        let mut p = MlpParams::zeros(&[in_dim, outputs.len()]).unwrap();
        p.layers_mut()[0].biases = outputs.to_vec();
        p
    }

    fn tr(reward: f64, done: bool) -> Transition {
        Transition {
            state: vec![0.0],
            action: 0,
            reward,
            next_state: vec![1.0],
            done,
        }
    }

    #[test]
    fn clip_active() {
        let y = sat_target(
            &tr(1.0, false),
            &constant_net(&[10.0, 2.0], 1),
            &const_baseline(0.0),
            &SatConfig::default(),
        )
        .unwrap();
        assert!((y - 1.495).abs() < 1e-12);
    }

    #[test]
    fn clip_inactive() {
        let y = sat_target(
            &tr(1.0, false),
            &constant_net(&[0.3, 0.1], 1),
            &const_baseline(0.0),
            &SatConfig::default(),
        )
        .unwrap();
        assert!((y - (1.0 + 0.99 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn terminal_returns_reward() {
        let y = sat_target(
            &tr(-1.0, true),
            &constant_net(&[100.0], 1),
            &const_baseline(50.0),
            &SatConfig::default(),
        )
        .unwrap();
        assert_eq!(y, -1.0);
    }

    #[test]
    fn large_margin_recovers_dqn_target() {
        let cfg = SatConfig {
            margin: 1e12,
            ..Default::default()
        };
        let y = clipped_target(0.5, false, 42.0, 0.0, &cfg);
        assert_eq!(y, 0.5 + 0.99 * 42.0);
    }

    fn learner_with_q(q: f64) -> LearnerState {
        LearnerState::new(constant_net(&[q, 0.0], 1), AdamConfig::default(), 10)
    }

    #[test]
    fn loss_vanishes_at_target_above_threshold() {
        // target net max = 10 → y = 1 + 0.99·0.5 = 1.495 with B = 0.
        let mut learner = learner_with_q(1.495);
        learner.target = constant_net(&[10.0, 0.0], 1);
        let t = tr(1.0, false);
        let cfg = SatConfig {
            margin: 0.5,
            ..Default::default()
        };
        // B(s) + m = 0.5 ≤ Q = 1.495: hinge inactive.
        let (loss, g) = sat_loss_and_grad(&[&t], &learner, &const_baseline(0.0), &cfg).unwrap();
        assert!(loss.abs() < 1e-20);
        assert!(g.max_abs() < 1e-9);
    }

    #[test]
    fn hand_evaluated_loss() {
        // Q(s,a)=1, y=1.495, B(s)+m=1.5, λ=0.1.
        let mut learner = learner_with_q(1.0);
        learner.target = constant_net(&[10.0, 0.0], 1);
        let mut table = EpisodicBaseline::new(0.0, 0.0).unwrap();
        table.update_episodic(&[vec![0.0]], 1.0); // B(s) = 1
        let baseline = Baseline::Episodic(table); // B(s') = 0 (unseen)
        let cfg = SatConfig::default();
        let (loss, _) = sat_loss_and_grad(&[&tr(1.0, false)], &learner, &baseline, &cfg).unwrap();
        assert!((loss - 0.270025).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn hinge_directions_differ() {
        let learner = learner_with_q(2.0);
        let baseline = const_baseline(0.0); // threshold 0.5 < Q
        let t = tr(0.0, true); // y = 0
        let below = SatConfig::default();
        let above = SatConfig {
            hinge_direction: HingeDirection::Above,
            ..Default::default()
        };
        let (lp, _) = sat_loss_and_grad(&[&t], &learner, &baseline, &below).unwrap();
        let (lq, _) = sat_loss_and_grad(&[&t], &learner, &baseline, &above).unwrap();
        assert!((lp - 4.0).abs() < 1e-12);
        assert!((lq - (4.0 + 0.1 * 1.5 * 1.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_hinge_is_clipped_td() {
        let mut learner = learner_with_q(0.2);
        learner.target = constant_net(&[10.0, 0.0], 1);
        let cfg = SatConfig {
            hinge_weight: 0.0,
            ..Default::default()
        };
        let (loss, _) =
            sat_loss_and_grad(&[&tr(1.0, false)], &learner, &const_baseline(0.0), &cfg).unwrap();
        assert!((loss - (1.495f64 - 0.2).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let online = MlpParams::new(&[3, 8, 2], &mut rng).unwrap();
        let mut learner = LearnerState::new(online, AdamConfig::default(), 10);
        learner.target = MlpParams::new(&[3, 8, 2], &mut rng).unwrap();
        let batch: Vec<Transition> = (0..6)
            .map(|i| Transition {
                state: (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
                action: i % 2,
                reward: rng.uniform_range(-1.0, 1.0),
                next_state: (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
                done: i == 5,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let baseline = const_baseline(0.1);
        let cfg = SatConfig::default();
        let (_, g) = sat_loss_and_grad(&refs, &learner, &baseline, &cfg).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            for i in 0..learner.online.layers()[l].weights.len() {
                let mut a = learner.clone();
                a.online.layers_mut()[l].weights[i] += h;
                let mut b = learner.clone();
                b.online.layers_mut()[l].weights[i] -= h;
                let fd = (sat_loss_and_grad(&refs, &a, &baseline, &cfg).unwrap().0
                    - sat_loss_and_grad(&refs, &b, &baseline, &cfg).unwrap().0)
                    / (2.0 * h);
                let an = g.weights[l][i];
                if an.abs() > 1e-6 {
                    assert!((an - fd).abs() / an.abs() < 1e-4, "{an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn sync_copies_online() {
        let mut rng = Rng::new(2);
        let mut learner = LearnerState::new(
            MlpParams::new(&[2, 4, 2], &mut rng).unwrap(),
            AdamConfig::default(),
            10,
        );
        let init = learner.online.clone();
        assert_eq!(learner.target, init);
        learner.online.layers_mut()[0].weights[0] += 1.0;
        learner.sync_target();
        let s = [0.3, -0.2];
        assert_eq!(
            learner.online.forward(&s).unwrap(),
            learner.target.forward(&s).unwrap()
        );
        assert_eq!(learner.syncs, 1);
    }

    #[test]
    fn tabular_huge_baseline_is_standard_backup() {
        let mdp = TabularMdp::new(2, 1, vec![0.5, 0.5, 1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let q = vec![3.0, 4.0];
        let cfg = SatConfig::default();
        let sat = tabular_sat_backup(&mdp, &q, &[1e300, 1e300], &cfg).unwrap();
        assert_eq!(sat, vec![1.0 + 0.99 * 3.5, 2.0 + 0.99 * 3.0]);
    }

    #[test]
    fn tabular_zero_clip() {
        let ns = 3;
        let mdp = TabularMdp::new(ns, 2, vec![1.0 / 3.0; ns * 2 * ns], vec![1.0; ns * 2]).unwrap();
        let cfg = SatConfig {
            margin: 0.0,
            ..Default::default()
        };
        let out = tabular_sat_backup(&mdp, &vec![0.0; ns * 2], &vec![0.0; ns], &cfg).unwrap();
        assert!(out.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn config_validation() {
        assert!(SatConfig::default().validate().is_ok());
        assert!(SatConfig {
            gamma: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SatConfig {
            margin: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
