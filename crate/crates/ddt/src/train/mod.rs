//! Preference-based training: Bradley-Terry loss, routing-balance penalty,
//! analytic reverse-mode gradients, and the Adam training loop.

pub mod adam;

pub use adam::{adam_step, AdamState};

use crate::error::{DdtError, Result};
use crate::tree::conv::{conv2d_backward, leaky_relu_grad};
use crate::tree::{
    ancestor_path, internal_path_probs, leaf_path_probs, node_depth, softmax, NodeActivation,
    NodeKind, RewardDdt,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    /// Ground-truth return, for labeler bookkeeping only; never read by the loss.
    pub gt_return: Option<f64>,
}

impl Trajectory {
    pub fn new(states: Vec<Vec<f64>>) -> Self {
        Trajectory { states, gt_return: None }
    }
}

/// A labeled preference: `worse` is dispreferred to `better`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub worse: Trajectory,
    pub better: Trajectory,
}

#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig {
    pub lambda_0: f64,
    pub enabled: bool,
}

impl PenaltyConfig {
    pub fn off() -> Self {
        PenaltyConfig { lambda_0: 0.0, enabled: false }
    }

    pub fn with_lambda(lambda_0: f64) -> Self {
        PenaltyConfig { lambda_0, enabled: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    Soft,
    Argmax,
}

const ALPHA_CLAMP: f64 = 1e-6;

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Sum of soft rewards over a trajectory.
pub fn trajectory_return_soft(tree: &RewardDdt, traj: &Trajectory) -> Result<f64> {
    if traj.states.is_empty() {
        return Err(DdtError::Empty("trajectory"));
    }
    let mut total = 0.0;
    for s in &traj.states {
        total += tree.soft_reward(s)?;
    }
    Ok(total)
}

/// Mean Bradley-Terry cross-entropy over the batch, computed in log space.
pub fn bradley_terry_loss(tree: &RewardDdt, batch: &[PreferencePair]) -> Result<f64> {
    if batch.is_empty() {
        return Err(DdtError::Empty("preference batch"));
    }
    let mut total = 0.0;
    for pair in batch {
        let g_worse = trajectory_return_soft(tree, &pair.worse)?;
        let g_better = trajectory_return_soft(tree, &pair.better)?;
        total += softplus(g_worse - g_better);
    }
    Ok(total / batch.len() as f64)
}

/// Routing-balance penalty over a set of states (Appendix-A style): per-node
/// batch routing rate `alpha_i` pushed toward 0.5 with a depth-decaying
/// coefficient `lambda_0 * 2^-depth(i)`.
pub fn penalty_term(tree: &RewardDdt, states: &[&[f64]], cfg: &PenaltyConfig) -> Result<f64> {
    if !cfg.enabled {
        return Ok(0.0);
    }
    if states.is_empty() {
        return Err(DdtError::Empty("penalty state set"));
    }
    let alphas = penalty_alphas(tree, states)?;
    Ok(penalty_from_alphas(&alphas, cfg))
}

/// Per-node batch routing rates `alpha_i` (path-probability weighted).
pub fn penalty_alphas(tree: &RewardDdt, states: &[&[f64]]) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(DdtError::Empty("penalty state set"));
    }
    let count = tree.spec.internal_node_count();
    let mut num = vec![0.0; count];
    let mut den = vec![0.0; count];
    for x in states {
        let probs = tree.node_probs(x)?;
        let paths = internal_path_probs(tree.spec.depth, &probs);
        for i in 0..count {
            num[i] += paths[i] * probs[i];
            den[i] += paths[i];
        }
    }
    Ok((0..count).map(|i| num[i] / den[i]).collect())
}

fn penalty_from_alphas(alphas: &[f64], cfg: &PenaltyConfig) -> f64 {
    let mut total = 0.0;
    for (i, &alpha) in alphas.iter().enumerate() {
        let a = alpha.clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP);
        let coeff = cfg.lambda_0 * 0.5f64.powi(node_depth(i) as i32);
        total += -coeff * (0.5 * a.ln() + 0.5 * (1.0 - a).ln());
    }
    total
}

/// Total objective: Bradley-Terry mean plus penalty (when enabled).
pub fn total_loss(tree: &RewardDdt, batch: &[PreferencePair], cfg: &PenaltyConfig) -> Result<f64> {
    let bt = bradley_terry_loss(tree, batch)?;
    if !cfg.enabled {
        return Ok(bt);
    }
    let states: Vec<&[f64]> = batch
        .iter()
        .flat_map(|p| p.worse.states.iter().chain(p.better.states.iter()))
        .map(|s| s.as_slice())
        .collect();
    Ok(bt + penalty_term(tree, &states, cfg)?)
}

struct StateEval {
    acts: Vec<NodeActivation>,
    node_probs: Vec<f64>,
    internal_paths: Vec<f64>,
    leaf_paths: Vec<f64>,
    soft_reward: f64,
}

fn eval_state(tree: &RewardDdt, leaf_rewards: &[f64], x: &[f64]) -> StateEval {
    let count = tree.spec.internal_node_count();
    let acts: Vec<NodeActivation> = (0..count).map(|i| tree.node_activation(i, x)).collect();
    let node_probs: Vec<f64> = acts.iter().map(|a| a.prob).collect();
    let internal_paths = internal_path_probs(tree.spec.depth, &node_probs);
    let leaf_paths = leaf_path_probs(tree.spec.depth, &node_probs);
    let soft_reward = leaf_paths.iter().zip(leaf_rewards).map(|(p, r)| p * r).sum();
    StateEval { acts, node_probs, internal_paths, leaf_paths, soft_reward }
}

/// Subtree expected rewards in heap order (internal nodes then leaves).
fn subtree_values(depth: usize, node_probs: &[f64], leaf_rewards: &[f64]) -> Vec<f64> {
    let internal = (1usize << depth) - 1;
    let total = internal + (1usize << depth);
    let mut v = vec![0.0; total];
    v[internal..].copy_from_slice(leaf_rewards);
    for i in (0..internal).rev() {
        let p = node_probs[i];
        v[i] = p * v[2 * i + 1] + (1.0 - p) * v[2 * i + 2];
    }
    v
}

struct ParamLayout {
    kernel_len: usize,
    conv_bias_len: usize,
    weight_len: usize,
    node_block: usize,
    leaf_offset: usize,
    class_count: usize,
}

impl ParamLayout {
    fn of(tree: &RewardDdt) -> Self {
        let (kernel_len, conv_bias_len) = match tree.spec.conv_shape() {
            Some(s) => (s.kernel_len(), s.out_channels),
            None => (0, 0),
        };
        let weight_len = tree.spec.feature_len();
        let node_block = kernel_len + conv_bias_len + weight_len + 1;
        ParamLayout {
            kernel_len,
            conv_bias_len,
            weight_len,
            node_block,
            leaf_offset: node_block * tree.spec.internal_node_count(),
            class_count: tree.spec.class_count(),
        }
    }

    fn node_offset(&self, node: usize) -> usize {
        node * self.node_block
    }

    fn leaf_logit_offset(&self, leaf: usize) -> usize {
        self.leaf_offset + leaf * self.class_count
    }
}

/// Backpropagates a per-node probability gradient for one state into the
/// flat parameter gradient.
fn backprop_node_grads(
    tree: &RewardDdt,
    layout: &ParamLayout,
    x: &[f64],
    eval: &StateEval,
    dprob: &[f64],
    grad: &mut [f64],
) {
    let beta = tree.spec.temperature;
    let slope = tree.spec.conv.unwrap_or_default().leaky_slope;
    for (node, &dp) in dprob.iter().enumerate() {
        if dp == 0.0 {
            continue;
        }
        let p = eval.node_probs[node];
        let dz = dp * p * (1.0 - p);
        let base = layout.node_offset(node);
        match tree.spec.node_kind {
            NodeKind::Simple => {
                for (k, &xv) in x.iter().enumerate() {
                    grad[base + k] += dz * beta * xv;
                }
                grad[base + layout.weight_len] += dz * beta;
            }
            NodeKind::Sophisticated => {
                let shape = tree.spec.conv_shape().expect("validated");
                let act = &eval.acts[node];
                let params = &tree.nodes[node];
                let wbase = base + layout.kernel_len + layout.conv_bias_len;
                // linear layer
                for (k, &f) in act.features.iter().enumerate() {
                    grad[wbase + k] += dz * f;
                }
                grad[wbase + layout.weight_len] += dz;
                // conv layer
                let grad_out: Vec<f64> = params
                    .weights
                    .iter()
                    .zip(&act.conv_pre)
                    .map(|(&w, &pre)| dz * w * leaky_relu_grad(slope, pre))
                    .collect();
                let (gk, rest) = grad[base..].split_at_mut(layout.kernel_len);
                let gb = &mut rest[..layout.conv_bias_len];
                conv2d_backward(&shape, x, &grad_out, gk, gb);
            }
        }
    }
}

/// Total loss and its exact analytic gradient over the canonical parameter
/// flattening. Accumulation order is fixed, so results are deterministic.
pub fn loss_and_grad(
    tree: &RewardDdt,
    batch: &[PreferencePair],
    cfg: &PenaltyConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(DdtError::Empty("preference batch"));
    }
    let layout = ParamLayout::of(tree);
    let mut grad = vec![0.0; tree.param_count()];

    let rewards = tree.spec.leaf_kind.reward_vector();
    let leaf_q: Vec<Vec<f64>> = tree.leaves.iter().map(|l| softmax(&l.logits)).collect();
    let leaf_soft: Vec<f64> = leaf_q
        .iter()
        .map(|q| q.iter().zip(&rewards).map(|(a, b)| a * b).sum())
        .collect();

    // Forward pass over every state, keeping caches for the backward pass.
    let mut evals: Vec<Vec<StateEval>> = Vec::with_capacity(batch.len() * 2);
    for pair in batch {
        for traj in [&pair.worse, &pair.better] {
            if traj.states.is_empty() {
                return Err(DdtError::Empty("trajectory"));
            }
            evals.push(
                traj.states
                    .iter()
                    .map(|s| {
                        let expected = tree.spec.input_shape.flat_len();
                        if s.len() != expected {
                            Err(DdtError::ShapeMismatch { expected, got: s.len() })
                        } else {
                            Ok(eval_state(tree, &leaf_soft, s))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
    }

    // Bradley-Terry loss and per-state reward coefficients.
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut coeffs: Vec<f64> = Vec::with_capacity(evals.len());
    for pair_idx in 0..batch.len() {
        let g_worse: f64 = evals[2 * pair_idx].iter().map(|e| e.soft_reward).sum();
        let g_better: f64 = evals[2 * pair_idx + 1].iter().map(|e| e.soft_reward).sum();
        let delta = g_worse - g_better;
        loss += softplus(delta) / n;
        let s = 1.0 / (1.0 + (-delta).exp());
        coeffs.push(s / n); // worse trajectory
        coeffs.push(-s / n); // better trajectory
    }

    // Penalty statistics.
    let internal = tree.spec.internal_node_count();
    let paths: Vec<Vec<(usize, bool)>> = (0..internal).map(ancestor_path).collect();
    let mut dc_dalpha = vec![0.0; internal];
    let mut alpha = vec![0.0; internal];
    let mut den = vec![0.0; internal];
    if cfg.enabled {
        let mut num = vec![0.0; internal];
        for traj in &evals {
            for e in traj {
                for i in 0..internal {
                    num[i] += e.internal_paths[i] * e.node_probs[i];
                    den[i] += e.internal_paths[i];
                }
            }
        }
        for i in 0..internal {
            alpha[i] = num[i] / den[i];
            let a = alpha[i].clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP);
            let coeff = cfg.lambda_0 * 0.5f64.powi(node_depth(i) as i32);
            loss += -coeff * (0.5 * a.ln() + 0.5 * (1.0 - a).ln());
            // clamped alphas sit on a flat segment of the objective
            if alpha[i] > ALPHA_CLAMP && alpha[i] < 1.0 - ALPHA_CLAMP {
                dc_dalpha[i] = coeff * (-0.5 / a + 0.5 / (1.0 - a));
            }
        }
    }

    // Backward pass, one state at a time in fixed order.
    let mut dprob = vec![0.0; internal];
    for (traj_idx, traj) in evals.iter().enumerate() {
        let coeff = coeffs[traj_idx];
        let pair = &batch[traj_idx / 2];
        let states = if traj_idx % 2 == 0 { &pair.worse.states } else { &pair.better.states };
        for (e, x) in traj.iter().zip(states) {
            dprob.iter_mut().for_each(|v| *v = 0.0);

            // reward gradient through routing probabilities
            let values = subtree_values(tree.spec.depth, &e.node_probs, &leaf_soft);
            for i in 0..internal {
                dprob[i] = coeff * e.internal_paths[i] * (values[2 * i + 1] - values[2 * i + 2]);
            }

            // reward gradient through leaf logits
            for (leaf, q) in leaf_q.iter().enumerate() {
                let base = layout.leaf_logit_offset(leaf);
                let scale = coeff * e.leaf_paths[leaf];
                for (k, &qk) in q.iter().enumerate() {
                    grad[base + k] += scale * qk * (rewards[k] - leaf_soft[leaf]);
                }
            }

            // penalty gradient through p_i directly and through ancestor paths
            if cfg.enabled {
                for i in 0..internal {
                    let da = dc_dalpha[i];
                    if da == 0.0 {
                        continue;
                    }
                    dprob[i] += da * e.internal_paths[i] / den[i];
                    if !paths[i].is_empty() {
                        let dpath = da * (e.node_probs[i] - alpha[i]) / den[i];
                        for (slot, &(j, left)) in paths[i].iter().enumerate() {
                            // path probability product excluding node j
                            let mut excl = 1.0;
                            for (other, &(a, a_left)) in paths[i].iter().enumerate() {
                                if other != slot {
                                    let q = e.node_probs[a];
                                    excl *= if a_left { q } else { 1.0 - q };
                                }
                            }
                            let sign = if left { 1.0 } else { -1.0 };
                            dprob[j] += dpath * sign * excl;
                        }
                    }
                }
            }

            backprop_node_grads(tree, &layout, x, e, &dprob, &mut grad);
        }
    }

    Ok((loss, grad))
}

/// Central-difference gradient oracle for `total_loss`.
pub fn finite_diff_grad(
    tree: &RewardDdt,
    batch: &[PreferencePair],
    cfg: &PenaltyConfig,
    h: f64,
) -> Result<Vec<f64>> {
    let mut params = tree.flatten_params();
    let mut scratch = tree.clone();
    let mut grad = vec![0.0; params.len()];
    for k in 0..params.len() {
        let orig = params[k];
        params[k] = orig + h;
        scratch.set_from_flat(&params)?;
        let plus = total_loss(&scratch, batch, cfg)?;
        params[k] = orig - h;
        scratch.set_from_flat(&params)?;
        let minus = total_loss(&scratch, batch, cfg)?;
        params[k] = orig;
        grad[k] = (plus - minus) / (2.0 * h);
    }
    scratch.set_from_flat(&params)?;
    Ok(grad)
}

/// Fraction of pairs ranked correctly; exact ties count as incorrect.
pub fn preference_accuracy(
    tree: &RewardDdt,
    pairs: &[PreferencePair],
    mode: RewardMode,
) -> Result<f64> {
    preference_accuracy_with(
        |x| match mode {
            RewardMode::Soft => tree.soft_reward(x),
            RewardMode::Argmax => tree.reward_argmax(x),
        },
        pairs,
    )
}

/// Preference accuracy of an arbitrary per-state reward function.
pub fn preference_accuracy_with<F>(mut reward: F, pairs: &[PreferencePair]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if pairs.is_empty() {
        return Err(DdtError::Empty("preference pairs"));
    }
    let mut correct = 0usize;
    for pair in pairs {
        let mut g_worse = 0.0;
        for s in &pair.worse.states {
            g_worse += reward(s)?;
        }
        let mut g_better = 0.0;
        for s in &pair.better.states {
            g_better += reward(s)?;
        }
        if g_better > g_worse {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub penalty: PenaltyConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DdtError::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DdtError::InvalidConfig("lr must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(DdtError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc_soft: f64,
    pub val_acc_argmax: f64,
    pub penalty_value: f64,
    pub wall_ms: u128,
}

/// Trains in place with per-epoch shuffling and Adam. Returns per-epoch
/// metrics; the final tree is the last epoch's (no early stopping).
pub fn train(
    tree: &mut RewardDdt,
    dataset: &[PreferencePair],
    validation: &[PreferencePair],
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    if dataset.is_empty() {
        return Err(DdtError::Empty("training dataset"));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(tree.param_count(), config.lr, config.weight_decay);
    let mut params = tree.flatten_params();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let mut penalty_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<PreferencePair> =
                chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (loss, grad) = loss_and_grad(tree, &batch, &config.penalty)?;
            if !loss.is_finite() {
                return Err(DdtError::NonFinite("training loss"));
            }
            if config.penalty.enabled {
                let states: Vec<&[f64]> = batch
                    .iter()
                    .flat_map(|p| p.worse.states.iter().chain(p.better.states.iter()))
                    .map(|s| s.as_slice())
                    .collect();
                penalty_sum += penalty_term(tree, &states, &config.penalty)?;
            }
            adam_step(&mut params, &grad, &mut adam)?;
            tree.set_from_flat(&params)?;
            train_loss += loss;
            batches += 1;
        }
        train_loss /= batches as f64;
        let penalty_value = if batches > 0 { penalty_sum / batches as f64 } else { 0.0 };
        let (val_loss, val_acc_soft, val_acc_argmax) = if validation.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                bradley_terry_loss(tree, validation)?,
                preference_accuracy(tree, validation, RewardMode::Soft)?,
                preference_accuracy(tree, validation, RewardMode::Argmax)?,
            )
        };
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_acc_soft,
            val_acc_argmax,
            penalty_value,
            wall_ms: start.elapsed().as_millis(),
        });
    }
    Ok(metrics)
}

/// Writes the per-epoch metrics CSV (`epoch, train_loss, val_loss,
/// val_acc_soft, val_acc_argmax, penalty_value, wall_ms`).
pub fn write_metrics_csv(path: &std::path::Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out =
        String::from("epoch,train_loss,val_loss,val_acc_soft,val_acc_argmax,penalty_value,wall_ms\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.epoch, m.train_loss, m.val_loss, m.val_acc_soft, m.val_acc_argmax, m.penalty_value,
            m.wall_ms
        ));
    }
    std::fs::write(path, out).map_err(|e| DdtError::io(format!("writing {}", path.display()), e))
}
