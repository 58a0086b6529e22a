//! Reward differentiable decision tree: model definition and forward passes.
//!
//! A tree of depth `d` has `2^d - 1` internal nodes stored in breadth-first
//! heap order (children of node `i` live at `2i+1` and `2i+2`) and `2^d`
//! leaves. Internal nodes emit a soft left-routing probability; leaves hold
//! logits over a discrete reward vector. The soft reward of an input is the
//! expectation of leaf rewards under the root-to-leaf path probabilities.

pub mod conv;
mod serialize;

use crate::error::{DdtError, Result};
use conv::ConvShape;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use serialize::MODEL_FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputShape {
    Flat { len: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn flat_len(&self) -> usize {
        match *self {
            InputShape::Flat { len } => len,
            InputShape::Image { channels, height, width } => channels * height * width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Simple,
    Sophisticated,
}

/// Convolution settings for sophisticated internal nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub leaky_slope: f64,
}

impl ConvConfig {
    /// 3x3 kernel, stride 1, single filter: MNIST-scale default.
    pub fn mnist() -> Self {
        ConvConfig { kernel: 3, stride: 1, out_channels: 1, leaky_slope: 0.01 }
    }

    /// 7x7 kernel, stride 2, 4 filters: Atari-scale default.
    pub fn atari() -> Self {
        ConvConfig { kernel: 7, stride: 2, out_channels: 4, leaky_slope: 0.01 }
    }
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig::mnist()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeafKind {
    /// Multi-class reward leaf: classification over `c` user-given reward values.
    Crl { rewards: Vec<f64> },
    /// Min-max interpolation leaf: convex combination of `r_min` and `r_max`.
    Il { r_min: f64, r_max: f64 },
}

impl LeafKind {
    pub fn class_count(&self) -> usize {
        match self {
            LeafKind::Crl { rewards } => rewards.len(),
            LeafKind::Il { .. } => 2,
        }
    }

    pub fn reward_vector(&self) -> Vec<f64> {
        match self {
            LeafKind::Crl { rewards } => rewards.clone(),
            LeafKind::Il { r_min, r_max } => vec![*r_min, *r_max],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LeafKind::Crl { rewards } => {
                if rewards.len() < 2 {
                    return Err(DdtError::InvalidSpec("CRL needs at least 2 reward values".into()));
                }
                if rewards.iter().any(|r| !r.is_finite()) {
                    return Err(DdtError::InvalidSpec("CRL reward values must be finite".into()));
                }
                for (i, a) in rewards.iter().enumerate() {
                    if rewards[i + 1..].iter().any(|b| b == a) {
                        return Err(DdtError::InvalidSpec("CRL reward values must be distinct".into()));
                    }
                }
            }
            LeafKind::Il { r_min, r_max } => {
                if !(r_min.is_finite() && r_max.is_finite() && r_min < r_max) {
                    return Err(DdtError::InvalidSpec("IL requires finite r_min < r_max".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub depth: usize,
    pub input_shape: InputShape,
    pub node_kind: NodeKind,
    pub leaf_kind: LeafKind,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvConfig>,
}

impl TreeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(DdtError::InvalidSpec("depth must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(DdtError::InvalidSpec("temperature must be finite and >= 0".into()));
        }
        self.leaf_kind.validate()?;
        match self.node_kind {
            NodeKind::Simple => {}
            NodeKind::Sophisticated => {
                let (c, h, w) = match self.input_shape {
                    InputShape::Image { channels, height, width } => (channels, height, width),
                    InputShape::Flat { .. } => {
                        return Err(DdtError::InvalidSpec(
                            "sophisticated nodes require an image input shape".into(),
                        ))
                    }
                };
                let cfg = self.conv.unwrap_or_default();
                if cfg.kernel == 0 || cfg.stride == 0 || cfg.out_channels == 0 {
                    return Err(DdtError::InvalidSpec("conv kernel/stride/channels must be > 0".into()));
                }
                if cfg.kernel > h || cfg.kernel > w || c == 0 {
                    return Err(DdtError::InvalidSpec("conv kernel larger than input image".into()));
                }
            }
        }
        Ok(())
    }

    pub fn internal_node_count(&self) -> usize {
        (1usize << self.depth) - 1
    }

    pub fn leaf_count(&self) -> usize {
        1usize << self.depth
    }

    pub fn class_count(&self) -> usize {
        self.leaf_kind.class_count()
    }

    pub fn conv_shape(&self) -> Option<ConvShape> {
        match (self.node_kind, self.input_shape) {
            (NodeKind::Sophisticated, InputShape::Image { channels, height, width }) => {
                let cfg = self.conv.unwrap_or_default();
                Some(ConvShape {
                    in_channels: channels,
                    height,
                    width,
                    out_channels: cfg.out_channels,
                    kernel: cfg.kernel,
                    stride: cfg.stride,
                })
            }
            _ => None,
        }
    }

    /// Length of the weight vector of each internal node.
    pub fn feature_len(&self) -> usize {
        match self.node_kind {
            NodeKind::Simple => self.input_shape.flat_len(),
            NodeKind::Sophisticated => self.conv_shape().expect("validated").output_len(),
        }
    }

    fn leaky_slope(&self) -> f64 {
        self.conv.unwrap_or_default().leaky_slope
    }
}

/// Parameters of one internal node. Conv fields are empty for simple nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conv_kernel: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conv_bias: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafParams {
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardDdt {
    pub spec: TreeSpec,
    pub nodes: Vec<NodeParams>,
    pub leaves: Vec<LeafParams>,
}

/// Per-input forward diagnostics.
#[derive(Debug, Clone)]
pub struct RoutingDiagnostics {
    pub node_left_probs: Vec<f64>,
    pub leaf_path_probs: Vec<f64>,
    pub leaf_soft_rewards: Vec<f64>,
    pub soft_reward: f64,
    pub argmax_leaf_index: usize,
}

const PROB_CLAMP: f64 = 1e-12;

/// Numerically stable sigmoid, clamped away from exact 0 and 1.
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Depth of internal node `i` in heap order (root = 0).
pub fn node_depth(i: usize) -> u32 {
    (i + 2).next_power_of_two().trailing_zeros() - 1
}

/// Cached activations of one internal node on one input.
#[derive(Debug, Clone)]
pub struct NodeActivation {
    /// Pre-activation conv output (sophisticated only).
    pub conv_pre: Vec<f64>,
    /// Post-LeakyReLU feature map (sophisticated only).
    pub features: Vec<f64>,
    pub prob: f64,
}

impl RewardDdt {
    fn check_input(&self, x: &[f64]) -> Result<()> {
        let expected = self.spec.input_shape.flat_len();
        if x.len() != expected {
            return Err(DdtError::ShapeMismatch { expected, got: x.len() });
        }
        Ok(())
    }

    /// Full activation of internal node `node` on input `x`.
    pub fn node_activation(&self, node: usize, x: &[f64]) -> NodeActivation {
        let params = &self.nodes[node];
        match self.spec.node_kind {
            NodeKind::Simple => {
                let dot: f64 = params.weights.iter().zip(x).map(|(w, v)| w * v).sum();
                let z = self.spec.temperature * (dot + params.bias);
                NodeActivation { conv_pre: Vec::new(), features: Vec::new(), prob: sigmoid(z) }
            }
            NodeKind::Sophisticated => {
                let shape = self.spec.conv_shape().expect("validated");
                let pre = conv::conv2d_forward(&shape, &params.conv_kernel, &params.conv_bias, x);
                let feat = conv::leaky_relu(self.spec.leaky_slope(), &pre);
                let dot: f64 = params.weights.iter().zip(&feat).map(|(w, v)| w * v).sum();
                let z = dot + params.bias; // temperature applies to simple nodes only
                NodeActivation { conv_pre: pre, features: feat, prob: sigmoid(z) }
            }
        }
    }

    /// Left-routing probability of internal node `node` for input `x`.
    pub fn route_probability(&self, node: usize, x: &[f64]) -> Result<f64> {
        if node >= self.nodes.len() {
            return Err(DdtError::NodeOutOfRange { index: node, count: self.nodes.len() });
        }
        self.check_input(x)?;
        Ok(self.node_activation(node, x).prob)
    }

    /// All internal-node left probabilities in breadth-first order.
    pub fn node_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok((0..self.nodes.len()).map(|i| self.node_activation(i, x).prob).collect())
    }

    /// Path probability from root to every leaf; entries sum to 1.
    pub fn path_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let probs = self.node_probs(x)?;
        Ok(leaf_path_probs(self.spec.depth, &probs))
    }

    /// Softmax distribution over reward classes at leaf `leaf`.
    pub fn leaf_distribution(&self, leaf: usize) -> Vec<f64> {
        softmax(&self.leaves[leaf].logits)
    }

    /// Expected reward at each leaf (`Q . R`).
    pub fn leaf_soft_rewards(&self) -> Vec<f64> {
        let rewards = self.spec.leaf_kind.reward_vector();
        self.leaves
            .iter()
            .map(|l| {
                softmax(&l.logits)
                    .iter()
                    .zip(&rewards)
                    .map(|(q, r)| q * r)
                    .sum()
            })
            .collect()
    }

    /// Soft reward plus routing diagnostics for `x`.
    pub fn forward_soft(&self, x: &[f64]) -> Result<RoutingDiagnostics> {
        let node_left_probs = self.node_probs(x)?;
        let leaf_path_probs = leaf_path_probs(self.spec.depth, &node_left_probs);
        let leaf_soft_rewards = self.leaf_soft_rewards();
        let soft_reward = leaf_path_probs
            .iter()
            .zip(&leaf_soft_rewards)
            .map(|(p, r)| p * r)
            .sum();
        let argmax_leaf_index = argmax_lowest(&leaf_path_probs);
        Ok(RoutingDiagnostics {
            node_left_probs,
            leaf_path_probs,
            leaf_soft_rewards,
            soft_reward,
            argmax_leaf_index,
        })
    }

    /// Soft reward only.
    pub fn soft_reward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_soft(x)?.soft_reward)
    }

    /// Argmax-path reward: CRL returns the reward of the most probable class at
    /// the most probable leaf, IL the convex combination there. Ties break to
    /// the lowest index.
    pub fn reward_argmax(&self, x: &[f64]) -> Result<f64> {
        let paths = self.path_probabilities(x)?;
        let leaf = argmax_lowest(&paths);
        let q = self.leaf_distribution(leaf);
        match &self.spec.leaf_kind {
            LeafKind::Crl { rewards } => Ok(rewards[argmax_lowest(&q)]),
            LeafKind::Il { r_min, r_max } => Ok(q[0] * r_min + q[1] * r_max),
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let per_node: usize = self
            .nodes
            .iter()
            .map(|n| n.conv_kernel.len() + n.conv_bias.len() + n.weights.len() + 1)
            .sum();
        per_node + self.leaves.iter().map(|l| l.logits.len()).sum::<usize>()
    }

    /// Canonical flattening: per node (conv kernel, conv bias, weights, bias)
    /// in breadth-first order, then per leaf logits.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for n in &self.nodes {
            out.extend_from_slice(&n.conv_kernel);
            out.extend_from_slice(&n.conv_bias);
            out.extend_from_slice(&n.weights);
            out.push(n.bias);
        }
        for l in &self.leaves {
            out.extend_from_slice(&l.logits);
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(DdtError::ParamLengthMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut i = 0;
        for n in &mut self.nodes {
            let len = n.conv_kernel.len();
            n.conv_kernel.copy_from_slice(&flat[i..i + len]);
            i += len;
            let len = n.conv_bias.len();
            n.conv_bias.copy_from_slice(&flat[i..i + len]);
            i += len;
            let len = n.weights.len();
            n.weights.copy_from_slice(&flat[i..i + len]);
            i += len;
            n.bias = flat[i];
            i += 1;
        }
        for l in &mut self.leaves {
            let len = l.logits.len();
            l.logits.copy_from_slice(&flat[i..i + len]);
            i += len;
        }
        Ok(())
    }
}

/// Leaf path probabilities from per-node left probabilities. Leaf `l` follows
/// bit `d-1-k` of `l` at level `k` (0 = left).
pub fn leaf_path_probs(depth: usize, node_probs: &[f64]) -> Vec<f64> {
    let leaves = 1usize << depth;
    let mut out = vec![0.0; leaves];
    for (leaf, slot) in out.iter_mut().enumerate() {
        let mut p = 1.0;
        let mut node = 0usize;
        for level in 0..depth {
            let go_left = (leaf >> (depth - 1 - level)) & 1 == 0;
            let q = node_probs[node];
            if go_left {
                p *= q;
                node = 2 * node + 1;
            } else {
                p *= 1.0 - q;
                node = 2 * node + 2;
            }
        }
        *slot = p;
    }
    out
}

/// Ancestors of internal node `i` with the branch taken (true = left), root first.
pub fn ancestor_path(i: usize) -> Vec<(usize, bool)> {
    let mut path = Vec::new();
    let mut node = i;
    while node != 0 {
        let parent = (node - 1) / 2;
        path.push((parent, node == 2 * parent + 1));
        node = parent;
    }
    path.reverse();
    path
}

/// Path probability from the root to every internal node (root = 1).
pub fn internal_path_probs(depth: usize, node_probs: &[f64]) -> Vec<f64> {
    let count = (1usize << depth) - 1;
    let mut out = vec![1.0; count];
    for i in 1..count {
        let parent = (i - 1) / 2;
        let q = node_probs[parent];
        out[i] = out[parent] * if i == 2 * parent + 1 { q } else { 1.0 - q };
    }
    out
}

pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Builds a tree with uniform-in-`[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights,
/// zero biases, and zero leaf logits.
pub fn init_tree<R: Rng>(spec: &TreeSpec, rng: &mut R) -> Result<RewardDdt> {
    spec.validate()?;
    let feature_len = spec.feature_len();
    let conv_shape = spec.conv_shape();
    let mut nodes = Vec::with_capacity(spec.internal_node_count());
    for _ in 0..spec.internal_node_count() {
        let (conv_kernel, conv_bias) = match conv_shape {
            Some(shape) => {
                let fan_in = shape.in_channels * shape.kernel * shape.kernel;
                let k = 1.0 / (fan_in as f64).sqrt();
                let kernel: Vec<f64> =
                    (0..shape.kernel_len()).map(|_| rng.gen_range(-k..=k)).collect();
                (kernel, vec![0.0; shape.out_channels])
            }
            None => (Vec::new(), Vec::new()),
        };
        let k = 1.0 / (feature_len as f64).sqrt();
        let weights: Vec<f64> = (0..feature_len).map(|_| rng.gen_range(-k..=k)).collect();
        nodes.push(NodeParams { conv_kernel, conv_bias, weights, bias: 0.0 });
    }
    let leaves = (0..spec.leaf_count())
        .map(|_| LeafParams { logits: vec![0.0; spec.class_count()] })
        .collect();
    Ok(RewardDdt { spec: spec.clone(), nodes, leaves })
}
