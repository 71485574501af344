mod common;

use common::{finite_difference, gradient_trial, max_relative_error, random_vec, scalar_forward};
use satenq::baseline::{Baseline, EpisodicBaseline};
use satenq::numerics::{MlpParams, Rng};
use satenq::pipeline::{td_loss_and_grad, TargetRule, TdLoss};
use satenq::replay::Transition;
use satenq::satcore::{sat_loss_and_grad, HingeDirection, LearnerState, SatConfig};

fn random_batch(n: usize, dim: usize, actions: usize, rng: &mut Rng) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            state: random_vec(dim, -1.5, 1.5, rng),
            action: rng.below(actions),
            reward: rng.uniform_range(-1.0, 1.0),
            next_state: random_vec(dim, -1.5, 1.5, rng),
            done: rng.bernoulli(0.2),
        })
        .collect()
}

#[test]
fn forward_matches_plain_loops() {
    let mut rng = Rng::new(11);
    for _ in 0..20 {
        let net = MlpParams::new(&[5, 32, 32, 3], &mut rng).unwrap();
        let x = random_vec(5, -3.0, 3.0, &mut rng);
        let lib = net.forward(&x).unwrap();
        for (a, b) in lib.iter().zip(scalar_forward(&net, &x)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn backward_matches_central_differences() {
    for seed in 0..10 {
        let err = gradient_trial(1000 + seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn satisficing_loss_gradient_both_hinges() {
    let mut rng = Rng::new(3);
    for direction in [HingeDirection::Below, HingeDirection::Above] {
        for _ in 0..3 {
            let online = MlpParams::new(&[4, 32, 2], &mut rng).unwrap();
            let mut learner = LearnerState::new(online, Default::default(), 10);
            learner.target = MlpParams::new(&[4, 32, 2], &mut rng).unwrap();
            // A default of 0 puts the threshold inside the range of Q, so the hinge is
            // active on some samples and inactive on others.
            let baseline = Baseline::Episodic(EpisodicBaseline::new(0.99, 0.0).unwrap());
            let cfg = SatConfig {
                margin: 0.1,
                hinge_weight: 0.5,
                hinge_direction: direction,
                ..SatConfig::default()
            };
            let batch = random_batch(16, 4, 2, &mut rng);
            let refs: Vec<&Transition> = batch.iter().collect();
            let (_, analytic) = sat_loss_and_grad(&refs, &learner, &baseline, &cfg).unwrap();
            let numeric = finite_difference(&learner.online, 1e-5, |p| {
                let probe = LearnerState {
                    online: p.clone(),
                    ..learner.clone()
                };
                sat_loss_and_grad(&refs, &probe, &baseline, &cfg).unwrap().0
            });
            let (err, compared) = max_relative_error(&analytic, &numeric, 1e-8);
            assert!(compared > 0);
            assert!(err < 1e-4, "{direction:?}: relative error {err:e}");
        }
    }
}

#[test]
fn td_loss_gradient_both_rules() {
    let mut rng = Rng::new(5);
    for rule in [TargetRule::Dqn, TargetRule::DoubleDqn] {
        for kind in [TdLoss::Mse, TdLoss::Huber] {
            let online = MlpParams::new(&[3, 32, 32, 2], &mut rng).unwrap();
            let target = MlpParams::new(&[3, 32, 32, 2], &mut rng).unwrap();
            let batch = random_batch(16, 3, 2, &mut rng);
            let refs: Vec<&Transition> = batch.iter().collect();
            let (_, analytic) = td_loss_and_grad(&refs, &online, &target, 0.9, rule, kind).unwrap();
            let numeric = finite_difference(&online, 1e-5, |p| {
                td_loss_and_grad(&refs, p, &target, 0.9, rule, kind).unwrap().0
            });
            let (err, _) = max_relative_error(&analytic, &numeric, 1e-8);
            assert!(err < 1e-4, "{rule:?}/{kind:?}: relative error {err:e}");
        }
    }
}
