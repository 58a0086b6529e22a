//! REINFORCE with a reward-to-go baseline for CartPole.

use crate::env::cartpole::{CartPoleAction, CartPoleEnv, CartPoleState, StartMode};
use crate::error::{DdtError, Result};
use crate::train::adam::{adam_step, AdamState};
use crate::tree::RewardDdt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Where the per-step training reward comes from. Evaluation always uses the
/// ground-truth box rule regardless of this choice.
#[derive(Clone, Copy)]
pub enum RewardSource<'a> {
    /// 1 inside the success box (|x| <= 2.4, |theta| <= 12 deg), else 0.
    GroundTruth,
    /// Learned soft reward on the (x, theta) observation.
    DdtSoft(&'a RewardDdt),
    /// Learned argmax reward on the (x, theta) observation.
    DdtArgmax(&'a RewardDdt),
}

impl RewardSource<'_> {
    fn reward(&self, state: &CartPoleState) -> f64 {
        match self {
            RewardSource::GroundTruth => {
                let inside =
                    state.x.abs() <= 2.4 && state.theta.abs() <= 12f64.to_radians();
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            RewardSource::DdtSoft(tree) => tree.soft_reward(&state.observation()).unwrap(),
            RewardSource::DdtArgmax(tree) => tree.reward_argmax(&state.observation()).unwrap(),
        }
    }
}

/// Ground-truth per-step reward used by every evaluator.
pub fn ground_truth_reward(state: &CartPoleState) -> f64 {
    RewardSource::GroundTruth.reward(state)
}

/// Two-action softmax policy: 4 -> hidden (tanh) -> 2.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub hidden: usize,
    /// Flat parameters: w1 (hidden x 4), b1, w2 (2 x hidden), b2.
    pub params: Vec<f64>,
}

impl PolicyNet {
    pub fn init(hidden: usize, rng: &mut ChaCha8Rng) -> PolicyNet {
        let mut params = Vec::with_capacity(hidden * 4 + hidden + 2 * hidden + 2);
        let s1 = 1.0 / (4f64).sqrt();
        for _ in 0..hidden * 4 {
            params.push(rng.gen_range(-s1..=s1));
        }
        params.extend(std::iter::repeat(0.0).take(hidden));
        let s2 = 1.0 / (hidden as f64).sqrt();
        for _ in 0..2 * hidden {
            params.push(rng.gen_range(-s2..=s2));
        }
        params.extend(std::iter::repeat(0.0).take(2));
        PolicyNet { hidden, params }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let h = self.hidden;
        let (w1, rest) = self.params.split_at(h * 4);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(2 * h);
        (w1, b1, w2, b2)
    }

    /// Action probabilities and the tanh hidden activations.
    pub fn forward(&self, obs: &[f64; 4]) -> ([f64; 2], Vec<f64>) {
        let h = self.hidden;
        let (w1, b1, w2, b2) = self.split();
        let mut hid = vec![0.0; h];
        for j in 0..h {
            let mut z = b1[j];
            for k in 0..4 {
                z += w1[j * 4 + k] * obs[k];
            }
            hid[j] = z.tanh();
        }
        let mut logits = [b2[0], b2[1]];
        for a in 0..2 {
            for j in 0..h {
                logits[a] += w2[a * h + j] * hid[j];
            }
        }
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        let z = e0 + e1;
        ([e0 / z, e1 / z], hid)
    }

    /// Accumulates `weight * d log pi(action|obs) / d params` into `grad`.
    fn accumulate_logp_grad(
        &self,
        obs: &[f64; 4],
        hid: &[f64],
        probs: &[f64; 2],
        action: usize,
        weight: f64,
        grad: &mut [f64],
    ) {
        let h = self.hidden;
        let (_, _, w2, _) = self.split();
        // d logp / d logit_a = 1[a == action] - probs[a]
        let dlogit = [
            (if action == 0 { 1.0 } else { 0.0 }) - probs[0],
            (if action == 1 { 1.0 } else { 0.0 }) - probs[1],
        ];
        let w1_off = 0;
        let b1_off = h * 4;
        let w2_off = b1_off + h;
        let b2_off = w2_off + 2 * h;
        for a in 0..2 {
            let d = weight * dlogit[a];
            grad[b2_off + a] += d;
            for j in 0..h {
                grad[w2_off + a * h + j] += d * hid[j];
            }
        }
        for j in 0..h {
            let mut dh = 0.0;
            for a in 0..2 {
                dh += dlogit[a] * w2[a * h + j];
            }
            let dz = weight * dh * (1.0 - hid[j] * hid[j]);
            grad[b1_off + j] += dz;
            for k in 0..4 {
                grad[w1_off + j * 4 + k] += dz * obs[k];
            }
        }
    }

    pub fn greedy_action(&self, obs: &[f64; 4]) -> CartPoleAction {
        let (probs, _) = self.forward(obs);
        if probs[1] >= probs[0] {
            CartPoleAction::PushRight
        } else {
            CartPoleAction::PushLeft
        }
    }
}

/// Policy input: the state scaled by nominal component ranges so every
/// dimension is O(1). Keeps the hidden layer out of tanh saturation on
/// states far from the start distribution.
fn obs4(s: &CartPoleState) -> [f64; 4] {
    [s.x / 2.4, s.x_dot / 3.0, s.theta / 0.2095, s.theta_dot / 3.0]
}

#[derive(Debug, Clone, Copy)]
pub struct ReinforceConfig {
    pub iterations: usize,
    pub episodes_per_batch: usize,
    pub hidden: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig {
            iterations: 150,
            episodes_per_batch: 16,
            hidden: 32,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Trains a CartPole policy with REINFORCE. The per-step advantage is the
/// reward-to-go minus its batch mean at that timestep. Returns the policy
/// and the per-iteration mean ground-truth return (the learning curve).
pub fn train_cartpole_policy(
    env: &CartPoleEnv,
    source: RewardSource<'_>,
    config: &ReinforceConfig,
) -> Result<(PolicyNet, Vec<f64>)> {
    if config.lr <= 0.0 || config.iterations == 0 || config.episodes_per_batch == 0 {
        return Err(DdtError::InvalidConfig("reinforce config must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = PolicyNet::init(config.hidden, &mut rng);
    let mut adam = AdamState::new(net.params.len(), config.lr, 0.0);
    let horizon = env.horizon;
    let mut curve = Vec::with_capacity(config.iterations);

    struct StepRecord {
        obs: [f64; 4],
        hid: Vec<f64>,
        probs: [f64; 2],
        action: usize,
    }

    for _ in 0..config.iterations {
        let mut batch: Vec<(Vec<StepRecord>, Vec<f64>)> =
            Vec::with_capacity(config.episodes_per_batch);
        let mut gt_sum = 0.0;
        for _ in 0..config.episodes_per_batch {
            let mut state = env.reset(StartMode::InDistribution, &mut rng);
            let mut steps = Vec::with_capacity(horizon);
            let mut rewards = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let obs = obs4(&state);
                let (probs, hid) = net.forward(&obs);
                let action = usize::from(rng.gen::<f64>() < probs[1]);
                steps.push(StepRecord { obs, hid, probs, action });
                rewards.push(source.reward(&state));
                gt_sum += ground_truth_reward(&state);
                let a = if action == 1 {
                    CartPoleAction::PushRight
                } else {
                    CartPoleAction::PushLeft
                };
                state = env.step(state, a);
            }
            // reward-to-go
            for t in (0..horizon - 1).rev() {
                rewards[t] += rewards[t + 1];
            }
            batch.push((steps, rewards));
        }
        curve.push(gt_sum / config.episodes_per_batch as f64);

        // per-timestep baseline: batch mean of reward-to-go
        let mut baseline = vec![0.0; horizon];
        for (_, rtg) in &batch {
            for t in 0..horizon {
                baseline[t] += rtg[t];
            }
        }
        for b in baseline.iter_mut() {
            *b /= config.episodes_per_batch as f64;
        }

        let scale = 1.0 / (config.episodes_per_batch * horizon) as f64;
        let mut grad = vec![0.0; net.params.len()];
        for (steps, rtg) in &batch {
            for (t, rec) in steps.iter().enumerate() {
                // ascent on expected return = descent on its negation
                let weight = -scale * (rtg[t] - baseline[t]);
                net.accumulate_logp_grad(
                    &rec.obs, &rec.hid, &rec.probs, rec.action, weight, &mut grad,
                );
            }
        }
        adam_step(&mut net.params, &grad, &mut adam)?;
    }
    Ok((net, curve))
}

/// Rolls out `episodes` greedy episodes and reports the per-episode
/// ground-truth returns (box rule, length `env.horizon`).
pub fn evaluate_cartpole_policy(
    env: &CartPoleEnv,
    net: &PolicyNet,
    mode: StartMode,
    episodes: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset(mode, &mut rng);
        let mut total = 0.0;
        for _ in 0..env.horizon {
            total += ground_truth_reward(&state);
            let action = net.greedy_action(&obs4(&state));
            state = env.step(state, action);
        }
        returns.push(total);
    }
    returns
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{iqm, mean_std};

    #[test]
    fn policy_outputs_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = PolicyNet::init(8, &mut rng);
        let (probs, _) = net.forward(&[0.1, -0.2, 0.05, 0.3]);
        assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12);
        assert!(probs[0] > 0.0 && probs[1] > 0.0);
    }

    #[test]
    fn logp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PolicyNet::init(6, &mut rng);
        let obs = [0.2, -0.1, 0.05, 0.4];
        for action in 0..2 {
            let mut grad = vec![0.0; net.params.len()];
            let (probs, hid) = net.forward(&obs);
            net.accumulate_logp_grad(&obs, &hid, &probs, action, 1.0, &mut grad);
            let h = 1e-6;
            for k in (0..net.params.len()).step_by(7) {
                let mut plus = net.clone();
                plus.params[k] += h;
                let mut minus = net.clone();
                minus.params[k] -= h;
                let lp = plus.forward(&obs).0[action].ln();
                let lm = minus.forward(&obs).0[action].ln();
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() < 1e-5,
                    "param {k} action {action}: fd {fd} vs analytic {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let env = CartPoleEnv::default();
        let bad = ReinforceConfig { lr: 0.0, ..Default::default() };
        assert!(train_cartpole_policy(&env, RewardSource::GroundTruth, &bad).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let env = CartPoleEnv::default();
        let config = ReinforceConfig { iterations: 3, episodes_per_batch: 4, ..Default::default() };
        let (a, curve_a) = train_cartpole_policy(&env, RewardSource::GroundTruth, &config).unwrap();
        let (b, curve_b) = train_cartpole_policy(&env, RewardSource::GroundTruth, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(curve_a, curve_b);
    }

    #[test]
    fn ground_truth_training_improves_smoothed_return() {
        let env = CartPoleEnv::default();
        let config = ReinforceConfig {
            iterations: 60,
            episodes_per_batch: 8,
            seed: 2,
            ..Default::default()
        };
        let (net, curve) = train_cartpole_policy(&env, RewardSource::GroundTruth, &config).unwrap();
        let head: f64 = curve[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = curve[curve.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail >= head, "no improvement: head {head} tail {tail}");
        let returns = evaluate_cartpole_policy(&env, &net, StartMode::InDistribution, 20, 3);
        let (mean, _) = mean_std(&returns);
        assert!(mean > head, "evaluation mean {mean} not above starting return {head}");
        let _ = iqm(&returns).unwrap();
    }
}
