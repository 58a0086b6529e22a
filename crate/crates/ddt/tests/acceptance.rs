//! Release acceptance suite. Each test covers one criterion and prints a
//! single machine-greppable verdict line (run with `--nocapture` to see
//! them all; a failing criterion shows its line in the failure output).
//!
//! Criteria 1-7 are fast deterministic property checks; criteria 8-12 are
//! desk-scale reproductions of the headline experiments with loose
//! tolerances and fixed seeds.

use ddt::data::{synthetic_glyphs, DigitPool};
use ddt::env::cartpole::{CartPoleEnv, StartMode};
use ddt::env::gridworld::{gridworld_make, gridworld_make_rect, Cell, GridworldMdp};
use ddt::interpret::{
    pixel_toggle_heatmap, sensitivity_report, synthetic_trace, TraceOutcome,
};
use ddt::policy::reinforce::{
    evaluate_cartpole_policy, train_cartpole_policy, ReinforceConfig, RewardSource,
};
use ddt::policy::{
    enumerate_optimal_return, evaluate_policy_gridworld, evaluate_random_policy_gridworld,
    pct_of_optimal, value_iteration,
};
use ddt::prefs::container::{dataset_from_bytes, dataset_to_bytes};
use ddt::prefs::{build_cartpole_dataset, build_gridworld_dataset, LabelerSpec};
use ddt::train::{
    bradley_terry_loss, finite_diff_grad, loss_and_grad, penalty_alphas, penalty_term,
    total_loss, train, PenaltyConfig, PreferencePair, RewardMode, TrainConfig, Trajectory,
};
use ddt::tree::{
    init_tree, ConvConfig, InputShape, LeafKind, NodeKind, RewardDdt, TreeSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn verdict(num: usize, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {num:02} [{tag}] {name}{}{detail}", if detail.is_empty() { "" } else { " " });
}

fn flat_spec(depth: usize, dim: usize, node_kind: NodeKind, leaf_kind: LeafKind) -> TreeSpec {
    TreeSpec {
        depth,
        input_shape: InputShape::Flat { len: dim },
        node_kind,
        leaf_kind,
        temperature: 1.0,
        conv: None,
    }
}

/// Initializes a tree and then re-randomizes every parameter in (-0.8, 0.8)
/// so leaves and conv stages are all away from their symmetric init.
fn random_tree(spec: &TreeSpec, seed: u64) -> RewardDdt {
    let mut tree = init_tree(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
    let flat: Vec<f64> = (0..tree.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
    tree.set_from_flat(&flat).unwrap();
    tree
}

fn random_pairs(dim: usize, len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<PreferencePair> {
    let traj = |rng: &mut ChaCha8Rng| {
        Trajectory::new(
            (0..len).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        )
    };
    (0..count).map(|_| PreferencePair { worse: traj(rng), better: traj(rng) }).collect()
}

fn grad_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central finite difference of the total loss along one coordinate.
fn fd_coordinate(
    tree: &RewardDdt,
    batch: &[PreferencePair],
    cfg: &PenaltyConfig,
    k: usize,
    h: f64,
) -> f64 {
    let mut params = tree.flatten_params();
    let mut scratch = tree.clone();
    let orig = params[k];
    params[k] = orig + h;
    scratch.set_from_flat(&params).unwrap();
    let plus = total_loss(&scratch, batch, cfg).unwrap();
    params[k] = orig - h;
    scratch.set_from_flat(&params).unwrap();
    let minus = total_loss(&scratch, batch, cfg).unwrap();
    (plus - minus) / (2.0 * h)
}

#[test]
fn a01_gradient_oracle() {
    let start = Instant::now();
    let leaf_kinds = [
        LeafKind::Crl { rewards: vec![-1.0, 0.5, 2.0] },
        LeafKind::Il { r_min: -1.0, r_max: 2.0 },
    ];
    let penalties = [PenaltyConfig::off(), PenaltyConfig::with_lambda(0.7)];
    let mut checked = 0usize;

    // Simple nodes: full-coordinate finite differences at flat shapes.
    for (li, leaf) in leaf_kinds.iter().enumerate() {
        for (pi, cfg) in penalties.iter().enumerate() {
            for i in 0..50u64 {
                let seed = 1000 + i * 17 + (li as u64) * 7919 + (pi as u64) * 104729;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let depth = 1 + (i as usize) % 3;
                let dim = 2 + (i as usize) % 4;
                let spec = flat_spec(depth, dim, NodeKind::Simple, leaf.clone());
                let tree = random_tree(&spec, seed);
                let batch = random_pairs(dim, 2, 2, &mut rng);
                let (_, grad) = loss_and_grad(&tree, &batch, cfg).unwrap();
                let fd = finite_diff_grad(&tree, &batch, cfg, 1e-5).unwrap();
                for (k, (&a, &f)) in grad.iter().zip(fd.iter()).enumerate() {
                    assert!(grad_close(a, f), "simple leaf={li} pen={pi} inst={i} coord {k}: {a} vs {f}");
                    checked += 1;
                }
            }
        }
    }

    // Sophisticated nodes at the 84x84x4 shape: sampled coordinates (a full
    // finite-difference sweep over ~7k parameters per node would blow the
    // one-minute budget without adding coverage).
    let image = InputShape::Image { channels: 4, height: 84, width: 84 };
    for (li, leaf) in leaf_kinds.iter().enumerate() {
        for (pi, cfg) in penalties.iter().enumerate() {
            for i in 0..50u64 {
                let seed = 9000 + i * 31 + (li as u64) * 7919 + (pi as u64) * 104729;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let spec = TreeSpec {
                    depth: 1,
                    input_shape: image,
                    node_kind: NodeKind::Sophisticated,
                    leaf_kind: leaf.clone(),
                    temperature: 1.0,
                    conv: Some(ConvConfig::atari()),
                };
                let tree = random_tree(&spec, seed);
                let dim = spec.input_shape.flat_len();
                let batch = random_pairs(dim, 1, 1, &mut rng);
                let (_, grad) = loss_and_grad(&tree, &batch, cfg).unwrap();
                let n = grad.len();
                // stratified sample: first, last, and eight random coordinates
                let mut coords = vec![0, n - 1];
                coords.extend((0..8).map(|_| rng.gen_range(0..n)));
                for k in coords {
                    let f = fd_coordinate(&tree, &batch, cfg, k, 1e-5);
                    assert!(
                        grad_close(grad[k], f),
                        "sophisticated leaf={li} pen={pi} inst={i} coord {k}: {} vs {f}",
                        grad[k]
                    );
                    checked += 1;
                }
            }
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass = elapsed < 60.0;
    verdict(1, "gradient oracle", pass, &format!("({checked} coords, {elapsed:.1}s)"));
    assert!(pass, "gradient oracle took {elapsed:.1}s (budget 60s)");
}

#[test]
fn a02_path_probability_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let leaf = LeafKind::Il { r_min: 0.0, r_max: 1.0 };
    let mut worst: f64 = 0.0;
    for i in 0..9_900u64 {
        let depth = 1 + (i as usize) % 4;
        let (spec, dim) = if i % 3 == 2 {
            let shape = InputShape::Image { channels: 1, height: 6, width: 6 };
            (
                TreeSpec {
                    depth,
                    input_shape: shape,
                    node_kind: NodeKind::Sophisticated,
                    leaf_kind: leaf.clone(),
                    temperature: 0.5 + (i % 5) as f64,
                    conv: Some(ConvConfig::mnist()),
                },
                36,
            )
        } else {
            let dim = 1 + (i as usize) % 6;
            let mut spec = flat_spec(depth, dim, NodeKind::Simple, leaf.clone());
            spec.temperature = 0.5 + (i % 5) as f64;
            (spec, dim)
        };
        let tree = random_tree(&spec, 40_000 + i);
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let sum: f64 = tree.path_probabilities(&x).unwrap().iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }
    for i in 0..100u64 {
        let spec = TreeSpec {
            depth: 1 + (i as usize) % 2,
            input_shape: InputShape::Image { channels: 4, height: 84, width: 84 },
            node_kind: NodeKind::Sophisticated,
            leaf_kind: leaf.clone(),
            temperature: 1.0,
            conv: Some(ConvConfig::atari()),
        };
        let tree = random_tree(&spec, 90_000 + i);
        let x: Vec<f64> = (0..spec.input_shape.flat_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sum: f64 = tree.path_probabilities(&x).unwrap().iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }
    let pass = worst <= 1e-9;
    verdict(2, "path-probability conservation", pass, &format!("(worst |sum-1| = {worst:.2e})"));
    assert!(pass);
}

#[test]
fn a03_value_iteration_vs_enumeration() {
    let digits = [0u8, 1, 2, 3];
    let pool = synthetic_glyphs(&digits, 3, &mut ChaCha8Rng::seed_from_u64(33));
    let mut worst: f64 = 0.0;
    for k in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + k);
        let (rows, cols, horizon) = match k % 4 {
            0 => (2, 2, 2),
            1 => (2, 2, 3),
            2 => (2, 3, 2),
            _ => (3, 2, 2),
        };
        let mdp = gridworld_make_rect(rows, cols, &digits, &pool, &mut rng).unwrap();
        let (policy, values) = value_iteration(&mdp, |c| mdp.reward(c), horizon);
        let vi_avg = values.iter().sum::<f64>() / values.len() as f64;
        let planned = evaluate_policy_gridworld(&mdp, &policy);
        let brute = enumerate_optimal_return(&mdp, horizon);
        worst = worst.max((vi_avg - brute).abs()).max((planned - brute).abs());
    }
    let pass = worst <= 1e-9;
    verdict(3, "value iteration vs exhaustive enumeration", pass, &format!("(worst gap = {worst:.2e})"));
    assert!(pass);
}

#[test]
fn a04_bradley_terry_anchors() {
    // constant soft reward 1.0 per state: depth-1 balanced node, uniform
    // CRL leaf over {0, 2}
    let mut tree = random_tree(&flat_spec(1, 2, NodeKind::Simple, LeafKind::Crl { rewards: vec![0.0, 2.0] }), 4);
    for node in tree.nodes.iter_mut() {
        node.weights.iter_mut().for_each(|w| *w = 0.0);
        node.bias = 0.0;
    }
    for leaf in tree.leaves.iter_mut() {
        leaf.logits.iter_mut().for_each(|l| *l = 0.3);
    }
    let state = vec![0.4, -0.2];
    assert!((tree.soft_reward(&state).unwrap() - 1.0).abs() < 1e-12);
    let traj = |len: usize| Trajectory::new(vec![state.clone(); len]);

    let tied = bradley_terry_loss(&tree, &[PreferencePair { worse: traj(5), better: traj(5) }]).unwrap();
    let pass_tie = (tied - std::f64::consts::LN_2).abs() < 1e-12;

    // return gap of exactly 1 and exactly 50 via trajectory lengths
    let gap1 = bradley_terry_loss(&tree, &[PreferencePair { worse: traj(2), better: traj(3) }]).unwrap();
    let pass_gap1 = (gap1 - 0.31326168751822286).abs() < 1e-12;

    let gap50 = bradley_terry_loss(&tree, &[PreferencePair { worse: traj(10), better: traj(60) }]).unwrap();
    let pass_gap50 = gap50.is_finite() && gap50 > 0.0 && gap50 < 1e-20;

    let pass = pass_tie && pass_gap1 && pass_gap50;
    verdict(4, "Bradley-Terry analytic anchors", pass, &format!("(tie={tied:.12}, gap1={gap1:.12}, gap50={gap50:.2e})"));
    assert!(pass);
}

#[test]
fn a05_penalty_anchors_and_dead_branch_report() {
    // alpha = 0.5 at the root -> ln 2 per unit coefficient
    let mut balanced = random_tree(&flat_spec(1, 2, NodeKind::Simple, LeafKind::Crl { rewards: vec![0.0, 1.0] }), 5);
    balanced.nodes[0].weights = vec![0.0, 0.0];
    balanced.nodes[0].bias = 0.0;
    let states = [vec![0.3, 0.1], vec![-0.7, 0.9]];
    let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
    let c_half = penalty_term(&balanced, &refs, &PenaltyConfig::with_lambda(1.0)).unwrap();
    let pass_half = (c_half - std::f64::consts::LN_2).abs() < 1e-12;

    // alpha = 0.9 -> 0.5 ln(1/0.9) + 0.5 ln(1/0.1) = 1.2039728...
    let mut skewed = balanced.clone();
    skewed.nodes[0].bias = (0.9f64 / 0.1).ln();
    let one = [vec![0.0, 0.0]];
    let one_ref: Vec<&[f64]> = one.iter().map(|s| s.as_slice()).collect();
    let c_nine = penalty_term(&skewed, &one_ref, &PenaltyConfig::with_lambda(1.0)).unwrap();
    let pass_nine = (c_nine - 1.2039728).abs() < 1e-6;

    // dead branch: the root always routes left, so node 2 (and its leaves)
    // never receive probability mass above the reachability threshold
    let mut dead = random_tree(&flat_spec(2, 2, NodeKind::Simple, LeafKind::Crl { rewards: vec![0.0, 1.0] }), 6);
    dead.nodes[0].weights = vec![0.0, 0.0];
    dead.nodes[0].bias = 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pool: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let trace = synthetic_trace(&dead, 2, &pool).unwrap();
    let pass_trace = matches!(trace, TraceOutcome::Unreachable { node_id: 2, excluded: 20 });

    let dir = tempfile::tempdir().unwrap();
    ddt::interpret::report::render_tree_report(&dead, dir.path(), Some(&pool)).unwrap();
    let trace_json = std::fs::read_to_string(dir.path().join("node2_trace.json")).unwrap();
    let pass_report = trace_json.contains("\"unreachable\": true");

    let pass = pass_half && pass_nine && pass_trace && pass_report;
    verdict(5, "penalty anchors and dead-branch report", pass,
        &format!("(ln2={c_half:.12}, a0.9={c_nine:.7}, unreachable={pass_trace}&{pass_report})"));
    assert!(pass);
}

/// Canonical IDX byte pair for `labels`, with per-image constant fill.
fn make_idx(labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    let mut images = Vec::with_capacity(16 + n * 784);
    images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&28u32.to_be_bytes());
    images.extend_from_slice(&28u32.to_be_bytes());
    for i in 0..n {
        images.extend(std::iter::repeat((i % 256) as u8).take(784));
    }
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (images, lab)
}

#[test]
fn a06_format_round_trips_and_idx_fuzz() {
    // model JSON: bit-exact parameters and spec through serialize/parse
    let spec = flat_spec(3, 4, NodeKind::Simple, LeafKind::Il { r_min: -2.5, r_max: 7.25 });
    let tree = random_tree(&spec, 60);
    let reparsed = RewardDdt::from_json(&tree.to_json()).unwrap();
    let pass_model = reparsed.spec == tree.spec
        && reparsed
            .flatten_params()
            .iter()
            .zip(tree.flatten_params().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());

    // dataset container: structural equality and byte-identical re-encoding
    let env = CartPoleEnv::default();
    let ds = build_cartpole_dataset(&env, &LabelerSpec::cartpole_box(), 20, 5, 20, 123).unwrap();
    let bytes = dataset_to_bytes(&ds).unwrap();
    let reloaded = dataset_from_bytes(&bytes).unwrap();
    let pass_dataset = reloaded == ds && dataset_to_bytes(&reloaded).unwrap() == bytes;

    // IDX fuzz: 1000 corruptions that must all be rejected. Classes:
    // header bytes of either file flipped to a different value, truncation,
    // trailing garbage, and out-of-range label values.
    let (images, labels) = make_idx(&[0, 1, 2, 3, 4, 5, 6, 7]);
    assert!(ddt::data::parse_idx_pair(&images, &labels).is_ok());
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut silent = 0usize;
    for _ in 0..1000 {
        let mut im = images.clone();
        let mut la = labels.clone();
        match rng.gen_range(0..6) {
            0 => {
                // corrupt an images header byte (magic/count/rows/cols)
                let k = rng.gen_range(0..16);
                let delta = rng.gen_range(1..=255u8);
                im[k] = im[k].wrapping_add(delta);
            }
            1 => {
                // corrupt a labels header byte (magic/count)
                let k = rng.gen_range(0..8);
                let delta = rng.gen_range(1..=255u8);
                la[k] = la[k].wrapping_add(delta);
            }
            2 => {
                let cut = rng.gen_range(1..=im.len() - 16);
                im.truncate(im.len() - cut);
            }
            3 => {
                let cut = rng.gen_range(1..=la.len() - 8);
                la.truncate(la.len() - cut);
            }
            4 => {
                if rng.gen::<bool>() {
                    im.push(rng.gen());
                } else {
                    la.push(rng.gen());
                }
            }
            _ => {
                // a label outside 0..=9 must be rejected
                let k = 8 + rng.gen_range(0..la.len() - 8);
                la[k] = rng.gen_range(10..=255u8);
            }
        }
        if ddt::data::parse_idx_pair(&im, &la).is_ok() {
            silent += 1;
        }
    }
    let pass_fuzz = silent == 0;

    let pass = pass_model && pass_dataset && pass_fuzz;
    verdict(6, "format round-trips and IDX fuzz", pass,
        &format!("(model={pass_model}, dataset={pass_dataset}, silent acceptances={silent})"));
    assert!(pass);
}

#[test]
fn a07_pixel_toggle_closed_form() {
    let sigma = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let spec = TreeSpec {
            depth: 2,
            input_shape: InputShape::Image { channels: 1, height: 4, width: 4 },
            node_kind: NodeKind::Simple,
            leaf_kind: LeafKind::Crl { rewards: vec![0.0, 1.0] },
            temperature: 0.5 + seed as f64 * 0.4,
            conv: None,
        };
        let tree = random_tree(&spec, 70 + seed);
        let beta = spec.temperature;
        for node in 0..3 {
            let heat = pixel_toggle_heatmap(&tree, node).unwrap();
            let params = &tree.nodes[node];
            let blank = sigma(beta * params.bias);
            for r in 0..4 {
                for c in 0..4 {
                    let expected = sigma(beta * (params.weights[r * 4 + c] + params.bias)) - blank;
                    worst = worst.max((heat.values[r][c] - expected).abs());
                }
            }
        }
    }
    let pass = worst <= 1e-12;
    verdict(7, "pixel-toggle closed form", pass, &format!("(worst gap = {worst:.2e})"));
    assert!(pass);
}

/// Plans greedily under the tree's reward on each MDP and reports the mean
/// percentage of the ground-truth-optimal return across `mdps` fresh MDPs.
fn planned_pct(
    tree: &RewardDdt,
    mode: RewardMode,
    digits: &[u8],
    pool: &DigitPool,
    size: usize,
    horizon: usize,
    mdps: usize,
    seed_base: u64,
) -> f64 {
    let mut total = 0.0;
    for k in 0..mdps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + k as u64);
        let mdp = gridworld_make(size, digits, pool, &mut rng).unwrap();
        let model_reward = |c: Cell| match mode {
            RewardMode::Soft => tree.soft_reward(mdp.image(c)).unwrap(),
            RewardMode::Argmax => tree.reward_argmax(mdp.image(c)).unwrap(),
        };
        let (policy, _) = value_iteration(&mdp, model_reward, horizon);
        let planned = evaluate_policy_gridworld(&mdp, &policy);
        let (_, gt_values) = value_iteration(&mdp, |c| mdp.reward(c), horizon);
        let optimal = gt_values.iter().sum::<f64>() / gt_values.len() as f64;
        total += pct_of_optimal(planned, optimal).unwrap();
    }
    total / mdps as f64
}

fn random_pct(mdp: &GridworldMdp, horizon: usize) -> f64 {
    let random = evaluate_random_policy_gridworld(mdp, horizon);
    let (_, gt_values) = value_iteration(mdp, |c| mdp.reward(c), horizon);
    let optimal = gt_values.iter().sum::<f64>() / gt_values.len() as f64;
    pct_of_optimal(random, optimal).unwrap()
}

#[test]
fn a08_mnist01_depth1_crl() {
    let digits = [0u8, 1];
    let pool = synthetic_glyphs(&digits, 30, &mut ChaCha8Rng::seed_from_u64(800));
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let mdp = gridworld_make(5, &digits, &pool, &mut rng).unwrap();
    let ds = build_gridworld_dataset(&mdp, 800, 200, 5, 802).unwrap();

    let spec = TreeSpec {
        depth: 1,
        input_shape: InputShape::Image { channels: 1, height: 28, width: 28 },
        node_kind: NodeKind::Simple,
        leaf_kind: LeafKind::Crl { rewards: vec![0.0, 1.0] },
        temperature: 1.0,
        conv: None,
    };
    let mut tree = init_tree(&spec, &mut ChaCha8Rng::seed_from_u64(803)).unwrap();
    let config = TrainConfig {
        epochs: 20,
        batch_size: 32,
        lr: 0.005,
        weight_decay: 0.001,
        penalty: PenaltyConfig::off(),
        seed: 804,
    };
    let metrics = train(&mut tree, &ds.train, &ds.validation, &config).unwrap();
    let acc = metrics.last().unwrap().val_acc_soft;

    let pct = planned_pct(&tree, RewardMode::Soft, &digits, &pool, 5, 5, 20, 805);
    let pass = acc >= 0.95 && pct >= 90.0;
    verdict(8, "MNIST 0/1 depth-1 CRL", pass, &format!("(val_acc={acc:.4}, pct_of_optimal={pct:.2})"));
    assert!(pass, "val_acc={acc}, pct={pct}");
}

/// Real MNIST when DDT_DATA_DIR points at the IDX files, else synthetic
/// glyphs; real pools are capped per digit to bound memory.
fn pool_for(digits: &[u8], variants: usize, seed: u64) -> DigitPool {
    if let Ok(dir) = std::env::var("DDT_DATA_DIR") {
        if let Some((im, la)) = ddt::data::find_mnist(std::path::Path::new(&dir)) {
            if let Ok(pool) = ddt::data::load_mnist_idx(&im, &la) {
                return pool.truncated(200);
            }
        }
    }
    synthetic_glyphs(digits, variants, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn a09_mnist03_depth2_il() {
    let digits = [0u8, 1, 2, 3];
    let pool = pool_for(&digits, 30, 900);
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    let mdp = gridworld_make(5, &digits, &pool, &mut rng).unwrap();
    let ds = build_gridworld_dataset(&mdp, 1500, 300, 5, 902).unwrap();

    let image = InputShape::Image { channels: 1, height: 28, width: 28 };
    let il_spec = TreeSpec {
        depth: 2,
        input_shape: image,
        node_kind: NodeKind::Simple,
        leaf_kind: LeafKind::Il { r_min: 0.0, r_max: 3.0 },
        temperature: 1.0,
        conv: None,
    };
    let config = TrainConfig {
        epochs: 25,
        batch_size: 32,
        lr: 0.005,
        weight_decay: 0.0005,
        penalty: PenaltyConfig::off(),
        seed: 903,
    };
    let mut il_tree = init_tree(&il_spec, &mut ChaCha8Rng::seed_from_u64(904)).unwrap();
    let metrics = train(&mut il_tree, &ds.train, &ds.validation, &config).unwrap();
    let acc = metrics.last().unwrap().val_acc_soft;

    let il_pct = planned_pct(&il_tree, RewardMode::Soft, &digits, &pool, 5, 5, 100, 905);

    let mut crl_spec = il_spec.clone();
    crl_spec.leaf_kind = LeafKind::Crl { rewards: vec![0.0, 1.0, 2.0, 3.0] };
    let mut crl_tree = init_tree(&crl_spec, &mut ChaCha8Rng::seed_from_u64(904)).unwrap();
    train(&mut crl_tree, &ds.train, &ds.validation, &config).unwrap();
    let crl_pct = planned_pct(&crl_tree, RewardMode::Soft, &digits, &pool, 5, 5, 100, 905);

    let mut random_total = 0.0;
    for k in 0..100u64 {
        let mut mrng = ChaCha8Rng::seed_from_u64(905 + k);
        let m = gridworld_make(5, &digits, &pool, &mut mrng).unwrap();
        random_total += random_pct(&m, 5);
    }
    let rand_pct = random_total / 100.0;

    let pass_acc = acc >= 0.90;
    let pass_il = il_pct >= 90.0;
    let pass_rand = (4.0..=12.0).contains(&rand_pct);
    let pass_order = crl_pct < il_pct;
    let pass = pass_acc && pass_il && pass_rand && pass_order;
    verdict(9, "MNIST 0-3 depth-2 IL", pass,
        &format!("(val_acc={acc:.4}, il_pct={il_pct:.2}, crl_pct={crl_pct:.2}, random_pct={rand_pct:.2})"));
    assert!(pass, "acc={acc}, il={il_pct}, crl={crl_pct}, random={rand_pct}");
}

#[test]
fn a10_mnist09_depth4_il() {
    let digits: Vec<u8> = (0..10).collect();
    let pool = pool_for(&digits, 30, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mdp = gridworld_make(10, &digits, &pool, &mut rng).unwrap();
    let ds = build_gridworld_dataset(&mdp, 2000, 400, 10, 1002).unwrap();

    let spec = TreeSpec {
        depth: 4,
        input_shape: InputShape::Image { channels: 1, height: 28, width: 28 },
        node_kind: NodeKind::Simple,
        leaf_kind: LeafKind::Il { r_min: 0.0, r_max: 9.0 },
        temperature: 1.0,
        conv: None,
    };
    let config = TrainConfig {
        epochs: 15,
        batch_size: 32,
        lr: 0.003,
        weight_decay: 0.0001,
        penalty: PenaltyConfig::off(),
        seed: 1003,
    };
    let mut tree = init_tree(&spec, &mut ChaCha8Rng::seed_from_u64(1004)).unwrap();
    train(&mut tree, &ds.train, &ds.validation, &config).unwrap();

    let soft = planned_pct(&tree, RewardMode::Soft, &digits, &pool, 10, 10, 50, 1005);
    let argmax = planned_pct(&tree, RewardMode::Argmax, &digits, &pool, 10, 10, 50, 1005);
    let pass = soft >= 85.0 && (soft - argmax) <= 10.0;
    verdict(10, "MNIST 0-9 depth-4 IL", pass, &format!("(soft_pct={soft:.2}, argmax_pct={argmax:.2})"));
    assert!(pass, "soft={soft}, argmax={argmax}");
}

#[test]
fn a11_cartpole_silent_misalignment() {
    let env = CartPoleEnv::default();
    let labeler = LabelerSpec::cartpole_box();
    let ds = build_cartpole_dataset(&env, &labeler, 2000, 200, 20, 1100).unwrap();

    let spec = flat_spec(2, 2, NodeKind::Simple, LeafKind::Crl { rewards: vec![0.0, 1.0] });
    let mut tree = init_tree(&spec, &mut ChaCha8Rng::seed_from_u64(1101)).unwrap();
    // zero weight decay on purpose: theta needs much larger raw weights
    // than x for the same routing effect, so any decay biases the tree
    // toward the spurious cart-position correlate
    let config = TrainConfig {
        epochs: 600,
        batch_size: 32,
        lr: 0.02,
        weight_decay: 0.0,
        penalty: PenaltyConfig::off(),
        seed: 1102,
    };
    train(&mut tree, &ds.train, &ds.validation, &config).unwrap();

    // (a) the learned reward leans on theta only: the biased data never
    // exercises the cart-position boundary
    let ranges = [(-2.4, 2.4), (-0.2095, 0.2095)];
    let report = sensitivity_report(&tree, &ranges, 101).unwrap();
    let pass_sens = report.misalignment_flag == Some(true);

    // (b) REINFORCE against the learned soft reward still scores well on
    // in-distribution starts ...
    let mut id_returns = Vec::new();
    let mut ood_returns = Vec::new();
    for seed in 0..5u64 {
        let rl = ReinforceConfig {
            iterations: 400,
            episodes_per_batch: 32,
            seed: 1110 + seed,
            ..ReinforceConfig::default()
        };
        let (net, _) = train_cartpole_policy(&env, RewardSource::DdtSoft(&tree), &rl).unwrap();
        id_returns.extend(evaluate_cartpole_policy(&env, &net, StartMode::InDistribution, 100, 1120 + seed));
        ood_returns.extend(evaluate_cartpole_policy(&env, &net, StartMode::OutOfDistribution, 100, 1130 + seed));
    }
    let id_mean = id_returns.iter().sum::<f64>() / id_returns.len() as f64;
    let ood_mean = ood_returns.iter().sum::<f64>() / ood_returns.len() as f64;

    // (c) ... while a ground-truth-trained policy recovers out of
    // distribution and the misaligned one does not
    let mut gt_ood = Vec::new();
    for seed in 0..5u64 {
        let rl = ReinforceConfig {
            iterations: 400,
            episodes_per_batch: 32,
            seed: 1140 + seed,
            ..ReinforceConfig::default()
        };
        let (net, _) = train_cartpole_policy(&env, RewardSource::GroundTruth, &rl).unwrap();
        gt_ood.extend(evaluate_cartpole_policy(&env, &net, StartMode::OutOfDistribution, 100, 1150 + seed));
    }
    let gt_ood_mean = gt_ood.iter().sum::<f64>() / gt_ood.len() as f64;

    let pass = pass_sens && id_mean >= 180.0 && ood_mean <= 50.0 && gt_ood_mean >= 120.0;
    verdict(11, "CartPole silent misalignment", pass,
        &format!("(theta_dominates={pass_sens}, id={id_mean:.1}, ood={ood_mean:.1}, gt_ood={gt_ood_mean:.1})"));
    assert!(pass, "sens={pass_sens}, id={id_mean}, ood={ood_mean}, gt_ood={gt_ood_mean}");
}

#[test]
fn a12_penalty_restores_routing_balance() {
    let digits = [0u8, 1, 2, 3];
    let pool = synthetic_glyphs(&digits, 30, &mut ChaCha8Rng::seed_from_u64(1200));
    let mut rng = ChaCha8Rng::seed_from_u64(1201);
    let mdp = gridworld_make(5, &digits, &pool, &mut rng).unwrap();
    let ds = build_gridworld_dataset(&mdp, 1500, 300, 5, 1202).unwrap();

    let spec = TreeSpec {
        depth: 2,
        input_shape: InputShape::Image { channels: 1, height: 28, width: 28 },
        node_kind: NodeKind::Simple,
        leaf_kind: LeafKind::Crl { rewards: vec![0.0, 1.0, 2.0, 3.0] },
        temperature: 1.0,
        conv: None,
    };
    let init = init_tree(&spec, &mut ChaCha8Rng::seed_from_u64(1203)).unwrap();
    let states: Vec<&[f64]> = ds
        .train
        .iter()
        .flat_map(|p| p.worse.states.iter().chain(p.better.states.iter()))
        .map(|s| s.as_slice())
        .collect();

    let base_config = TrainConfig {
        epochs: 25,
        batch_size: 32,
        lr: 0.005,
        weight_decay: 0.0005,
        penalty: PenaltyConfig::off(),
        seed: 1204,
    };
    let mut plain = init.clone();
    train(&mut plain, &ds.train, &ds.validation, &base_config).unwrap();
    let plain_alphas = penalty_alphas(&plain, &states).unwrap();

    let mut penalized = init.clone();
    let config = TrainConfig { penalty: PenaltyConfig::with_lambda(1.0), ..base_config };
    train(&mut penalized, &ds.train, &ds.validation, &config).unwrap();
    let alphas = penalty_alphas(&penalized, &states).unwrap();

    let pass = alphas.iter().all(|&a| (0.05..=0.95).contains(&a));
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join("/");
    verdict(12, "penalty restores routing balance", pass,
        &format!("(plain alphas {}, penalized alphas {})", fmt(&plain_alphas), fmt(&alphas)));
    assert!(pass, "alphas={alphas:?}");
}
