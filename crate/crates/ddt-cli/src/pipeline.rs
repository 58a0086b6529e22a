//! Stage implementations behind the subcommands: dataset generation,
//! training, evaluation, RL, and interpretability reports.

use crate::config::{EnvBlock, ExperimentConfig};
use ddt::data::{find_mnist, load_mnist_idx, synthetic_glyphs, DigitPool};
use ddt::env::cartpole::{CartPoleEnv, StartMode};
use ddt::env::gridworld::{gridworld_make, Cell, GridworldMdp};
use ddt::interpret::report::render_tree_report;
use ddt::interpret::sensitivity_report;
use ddt::policy::reinforce::{
    evaluate_cartpole_policy, train_cartpole_policy, ReinforceConfig, RewardSource,
};
use ddt::policy::{
    evaluate_policy_gridworld, evaluate_random_policy_gridworld, iqm, mean_std, pct_of_optimal,
    value_iteration,
};
use ddt::prefs::container::{load_dataset, save_dataset};
use ddt::prefs::{build_cartpole_dataset, build_gridworld_dataset, LabelerSpec, PreferenceDataset};
use ddt::train::{
    preference_accuracy, train, write_metrics_csv, PenaltyConfig, RewardMode,
    TrainConfig,
};
use ddt::tree::{init_tree, RewardDdt};
use ddt::{DdtError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct ProvenanceFile {
    stage: String,
    config_sha256: String,
    seeds: BTreeMap<String, serde_json::Value>,
    artifact_sha256: BTreeMap<String, String>,
}

/// Writes `provenance.json` for a finished stage: config hash, seeds, and a
/// hash per produced artifact.
pub fn write_provenance(
    dir: &Path,
    stage: &str,
    config_text: &str,
    seeds: BTreeMap<String, serde_json::Value>,
    artifacts: &[PathBuf],
) -> Result<()> {
    let mut artifact_sha256 = BTreeMap::new();
    for path in artifacts {
        let bytes = std::fs::read(path)
            .map_err(|e| DdtError::io(format!("hashing {}", path.display()), e))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        artifact_sha256.insert(name, sha256_hex(&bytes));
    }
    let file = ProvenanceFile {
        stage: stage.to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seeds,
        artifact_sha256,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| DdtError::Format(e.to_string()))?;
    let path = dir.join("provenance.json");
    std::fs::write(&path, text)
        .map_err(|e| DdtError::io(format!("writing {}", path.display()), e))
}

/// Builds the digit pool a config asks for. "auto" prefers real MNIST under
/// DDT_DATA_DIR, falling back to synthetic glyphs.
pub fn build_pool(config: &ExperimentConfig) -> Result<Option<DigitPool>> {
    let (digits, data_source, glyph_variants) = match &self_env(config) {
        EnvBlock::MnistGrid { digits, data_source, glyph_variants, .. } => {
            (digits.clone(), data_source.clone(), *glyph_variants)
        }
        EnvBlock::Cartpole => return Ok(None),
    };
    let mnist_dir = std::env::var("DDT_DATA_DIR").map(PathBuf::from).ok();
    let mnist_files = mnist_dir.as_deref().and_then(find_mnist);
    let pool = match (data_source.as_str(), mnist_files) {
        ("synthetic", _) | ("auto", None) => {
            let mut rng = ChaCha8Rng::seed_from_u64(pool_seed(config));
            synthetic_glyphs(&digits, glyph_variants, &mut rng)
        }
        ("mnist", None) => {
            return Err(DdtError::io(
                "locating MNIST via DDT_DATA_DIR".to_string(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "train files not found"),
            ))
        }
        (_, Some((images, labels))) => load_mnist_idx(&images, &labels)?,
        (other, None) => {
            return Err(DdtError::InvalidConfig(format!(
                "environment.data_source: unknown value {other:?}"
            )))
        }
    };
    for &d in &digits {
        if !pool.has_digit(d) {
            return Err(DdtError::Empty("image pool for a required digit"));
        }
    }
    Ok(Some(pool))
}

fn self_env(config: &ExperimentConfig) -> EnvBlock {
    config.environment.clone()
}

fn pool_seed(config: &ExperimentConfig) -> u64 {
    match &config.environment {
        EnvBlock::MnistGrid { seed, .. } => seed.wrapping_add(0x9e37_79b9),
        EnvBlock::Cartpole => 0,
    }
}

/// The MDP a config's gridworld experiments run on.
pub fn build_mdp(config: &ExperimentConfig, pool: &DigitPool) -> Result<GridworldMdp> {
    match &config.environment {
        EnvBlock::MnistGrid { size, digits, seed, .. } => {
            gridworld_make(*size, digits, pool, &mut ChaCha8Rng::seed_from_u64(*seed))
        }
        EnvBlock::Cartpole => Err(DdtError::InvalidConfig(
            "this stage needs an mnist_grid environment".into(),
        )),
    }
}

pub fn default_dataset_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir().join("prefs.ddtp")
}

pub fn default_model_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir().join("model.json")
}

pub fn generate_dataset(config: &ExperimentConfig) -> Result<PreferenceDataset> {
    let p = &config.preferences;
    match &config.environment {
        EnvBlock::Cartpole => build_cartpole_dataset(
            &CartPoleEnv::default(),
            &LabelerSpec::cartpole_box(),
            p.train_pairs,
            p.val_pairs,
            p.length,
            p.seed,
        ),
        EnvBlock::MnistGrid { .. } => {
            let pool = build_pool(config)?.expect("gridworld config has a pool");
            let mdp = build_mdp(config, &pool)?;
            build_gridworld_dataset(&mdp, p.train_pairs, p.val_pairs, p.length, p.seed)
        }
    }
}

pub fn run_gen_prefs(config: &ExperimentConfig, config_text: &str) -> Result<PathBuf> {
    let dir = config.output_dir();
    std::fs::create_dir_all(&dir)
        .map_err(|e| DdtError::io(format!("creating {}", dir.display()), e))?;
    let dataset = generate_dataset(config)?;
    let path = default_dataset_path(config);
    save_dataset(&dataset, &path)?;
    let mut seeds = BTreeMap::new();
    seeds.insert("preferences".to_string(), config.preferences.seed.into());
    write_provenance(&dir, "gen-prefs", config_text, seeds, &[path.clone()])?;
    Ok(path)
}

pub fn run_train(
    config: &ExperimentConfig,
    config_text: &str,
    dataset_path: &Path,
) -> Result<(PathBuf, f64)> {
    let dir = config.output_dir();
    std::fs::create_dir_all(&dir)
        .map_err(|e| DdtError::io(format!("creating {}", dir.display()), e))?;
    let dataset = load_dataset(dataset_path)?;
    let spec = config.tree_spec()?;
    let mut tree = init_tree(&spec, &mut ChaCha8Rng::seed_from_u64(config.training.seed))?;
    let train_config = TrainConfig {
        epochs: config.training.epochs,
        batch_size: config.training.batch_size,
        lr: config.training.lr,
        weight_decay: config.training.weight_decay,
        penalty: match config.training.penalty_lambda {
            Some(lambda) => PenaltyConfig::with_lambda(lambda),
            None => PenaltyConfig::off(),
        },
        seed: config.training.seed,
    };
    let metrics = train(&mut tree, &dataset.train, &dataset.validation, &train_config)?;
    for m in &metrics {
        if !m.train_loss.is_finite() || !m.val_loss.is_finite() {
            return Err(DdtError::NonFinite("training loss"));
        }
    }
    let model_path = default_model_path(config);
    tree.save(&model_path)?;
    let metrics_path = dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &metrics)?;
    let mut seeds = BTreeMap::new();
    seeds.insert("training".to_string(), config.training.seed.into());
    write_provenance(
        &dir,
        "train",
        config_text,
        seeds,
        &[model_path.clone(), metrics_path],
    )?;
    let final_acc = metrics.last().map(|m| m.val_acc_soft).unwrap_or(0.0);
    Ok((model_path, final_acc))
}

pub fn run_eval(
    model_path: &Path,
    dataset_path: &Path,
    mode: RewardMode,
    csv_path: &Path,
) -> Result<f64> {
    let tree = RewardDdt::load(model_path)?;
    let dataset = load_dataset(dataset_path)?;
    let acc = preference_accuracy(&tree, &dataset.validation, mode)?;
    if !acc.is_finite() {
        return Err(DdtError::NonFinite("validation accuracy"));
    }
    let mode_name = match mode {
        RewardMode::Soft => "soft",
        RewardMode::Argmax => "argmax",
    };
    append_csv(
        csv_path,
        "model,dataset,mode,val_pairs,accuracy",
        &format!(
            "{},{},{},{},{}",
            model_path.display(),
            dataset_path.display(),
            mode_name,
            dataset.validation.len(),
            acc
        ),
    )?;
    Ok(acc)
}

fn append_csv(path: &Path, header: &str, row: &str) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| DdtError::io(format!("opening {}", path.display()), e))?;
    if fresh {
        writeln!(file, "{header}").map_err(|e| DdtError::io("writing csv header", e))?;
    }
    writeln!(file, "{row}").map_err(|e| DdtError::io("writing csv row", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlMode {
    Soft,
    Argmax,
    GroundTruth,
}

impl RlMode {
    pub fn name(self) -> &'static str {
        match self {
            RlMode::Soft => "soft",
            RlMode::Argmax => "argmax",
            RlMode::GroundTruth => "ground-truth",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RlRow {
    pub run_id: String,
    pub env: String,
    pub reward_mode: String,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
    pub iqm: f64,
    pub pct_of_optimal: Option<f64>,
}

/// CartPole RL: trains one REINFORCE policy per seed under the requested
/// reward source, then evaluates against the ground-truth box reward.
pub fn run_rl_cartpole(
    config: &ExperimentConfig,
    model: Option<&RewardDdt>,
    mode: RlMode,
    ood: bool,
    run_id: &str,
) -> Result<Vec<RlRow>> {
    let env = CartPoleEnv::default();
    let start_mode = if ood { StartMode::OutOfDistribution } else { StartMode::InDistribution };
    let mut rows = Vec::new();
    for &seed in &config.rl.seeds {
        let source = match (mode, model) {
            (RlMode::GroundTruth, _) => RewardSource::GroundTruth,
            (RlMode::Soft, Some(tree)) => RewardSource::DdtSoft(tree),
            (RlMode::Argmax, Some(tree)) => RewardSource::DdtArgmax(tree),
            (_, None) => {
                return Err(DdtError::InvalidConfig(
                    "rl mode soft/argmax needs --model".into(),
                ))
            }
        };
        let rc = ReinforceConfig {
            iterations: config.rl.iterations,
            episodes_per_batch: config.rl.episodes_per_batch,
            hidden: config.rl.hidden,
            lr: config.rl.lr,
            seed,
        };
        let (net, _) = train_cartpole_policy(&env, source, &rc)?;
        let returns =
            evaluate_cartpole_policy(&env, &net, start_mode, config.rl.episodes, seed ^ 0x5a5a);
        let (mean, std) = mean_std(&returns);
        rows.push(RlRow {
            run_id: run_id.to_string(),
            env: if ood { "cartpole-ood".to_string() } else { "cartpole".to_string() },
            reward_mode: mode.name().to_string(),
            seed,
            mean,
            std,
            iqm: iqm(&returns)?,
            pct_of_optimal: None,
        });
    }
    Ok(rows)
}

/// Gridworld RL: per MDP, plans under the requested reward, evaluates under
/// ground truth, and reports the percentage of the optimal return. One row
/// per configured seed batch; mean/std/IQM are across MDPs.
pub fn run_rl_gridworld(
    config: &ExperimentConfig,
    model: Option<&RewardDdt>,
    mode: RlMode,
    run_id: &str,
) -> Result<Vec<RlRow>> {
    let pool = build_pool(config)?.ok_or_else(|| {
        DdtError::InvalidConfig("rl on a gridworld needs an mnist_grid environment".into())
    })?;
    let (size, digits, env_seed) = match &config.environment {
        EnvBlock::MnistGrid { size, digits, seed, .. } => (*size, digits.clone(), *seed),
        EnvBlock::Cartpole => unreachable!("pool exists only for gridworlds"),
    };
    let horizon = config.preferences.length;
    let mut pcts = Vec::with_capacity(config.rl.mdps);
    for k in 0..config.rl.mdps {
        let mut rng = ChaCha8Rng::seed_from_u64(env_seed.wrapping_add(k as u64));
        let mdp = gridworld_make(size, &digits, &pool, &mut rng)?;
        let (_, optimal_values) = value_iteration(&mdp, |c| mdp.reward(c), horizon);
        let optimal = optimal_values.iter().sum::<f64>() / mdp.cell_count() as f64;
        let achieved = match (mode, model) {
            (RlMode::GroundTruth, _) => optimal,
            (RlMode::Soft, Some(tree)) => {
                let reward = |c: Cell| tree.soft_reward(mdp.image(c)).unwrap_or(f64::NAN);
                let (policy, _) = value_iteration(&mdp, reward, horizon);
                evaluate_policy_gridworld(&mdp, &policy)
            }
            (RlMode::Argmax, Some(tree)) => {
                let reward = |c: Cell| tree.reward_argmax(mdp.image(c)).unwrap_or(f64::NAN);
                let (policy, _) = value_iteration(&mdp, reward, horizon);
                evaluate_policy_gridworld(&mdp, &policy)
            }
            (_, None) => {
                return Err(DdtError::InvalidConfig(
                    "rl mode soft/argmax needs --model".into(),
                ))
            }
        };
        if !achieved.is_finite() {
            return Err(DdtError::NonFinite("planned policy return"));
        }
        pcts.push(pct_of_optimal(achieved, optimal)?);
    }
    let (mean, std) = mean_std(&pcts);
    let mut rows = vec![RlRow {
        run_id: run_id.to_string(),
        env: format!("gridworld{size}x{size}"),
        reward_mode: mode.name().to_string(),
        seed: env_seed,
        mean,
        std,
        iqm: iqm(&pcts)?,
        pct_of_optimal: Some(mean),
    }];
    // the uniform-random baseline over the same MDP batch, for comparison
    let random_pct = random_policy_pct(config)?;
    rows.push(RlRow {
        run_id: run_id.to_string(),
        env: format!("gridworld{size}x{size}"),
        reward_mode: "random".to_string(),
        seed: env_seed,
        mean: random_pct,
        std: 0.0,
        iqm: random_pct,
        pct_of_optimal: Some(random_pct),
    });
    Ok(rows)
}

/// Average percentage of optimal obtained by the uniform-random policy over
/// the same MDP batch the learned rewards are scored on.
pub fn random_policy_pct(config: &ExperimentConfig) -> Result<f64> {
    let pool = build_pool(config)?.ok_or_else(|| {
        DdtError::InvalidConfig("random baseline needs an mnist_grid environment".into())
    })?;
    let (size, digits, env_seed) = match &config.environment {
        EnvBlock::MnistGrid { size, digits, seed, .. } => (*size, digits.clone(), *seed),
        EnvBlock::Cartpole => unreachable!(),
    };
    let horizon = config.preferences.length;
    let mut pcts = Vec::with_capacity(config.rl.mdps);
    for k in 0..config.rl.mdps {
        let mut rng = ChaCha8Rng::seed_from_u64(env_seed.wrapping_add(k as u64));
        let mdp = gridworld_make(size, &digits, &pool, &mut rng)?;
        let (_, optimal_values) = value_iteration(&mdp, |c| mdp.reward(c), horizon);
        let optimal = optimal_values.iter().sum::<f64>() / mdp.cell_count() as f64;
        let random = evaluate_random_policy_gridworld(&mdp, horizon);
        pcts.push(pct_of_optimal(random, optimal)?);
    }
    Ok(pcts.iter().sum::<f64>() / pcts.len() as f64)
}

pub fn write_rl_csv(path: &Path, rows: &[RlRow]) -> Result<()> {
    for row in rows {
        append_csv(
            path,
            "run_id,env,reward_mode,seed,mean,std,iqm,pct_of_optimal",
            &format!(
                "{},{},{},{},{},{},{},{}",
                row.run_id,
                row.env,
                row.reward_mode,
                row.seed,
                row.mean,
                row.std,
                row.iqm,
                row.pct_of_optimal.map(|p| p.to_string()).unwrap_or_default()
            ),
        )?;
    }
    Ok(())
}

/// Interpretability bundle: report rendering plus, for 2-dim inputs, the
/// sensitivity scores with the misalignment flag.
pub fn run_interpret(
    config: &ExperimentConfig,
    tree: &RewardDdt,
    pool_dataset: Option<&Path>,
) -> Result<PathBuf> {
    let dir = config.output_dir().join("report");
    let pool: Vec<Vec<f64>> = match pool_dataset {
        Some(path) => {
            let dataset = load_dataset(path)?;
            let mut states: Vec<Vec<f64>> = dataset
                .train
                .iter()
                .chain(&dataset.validation)
                .flat_map(|p| p.worse.states.iter().chain(&p.better.states).cloned())
                .collect();
            states.truncate(500);
            states
        }
        None => match &config.environment {
            EnvBlock::MnistGrid { .. } => {
                let pool = build_pool(config)?.expect("gridworld pool");
                let mdp = build_mdp(config, &pool)?;
                mdp.cell_images.iter().flatten().cloned().collect()
            }
            EnvBlock::Cartpole => {
                // sample the heatmap window uniformly
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                (0..200)
                    .map(|_| {
                        vec![
                            rand::Rng::gen_range(&mut rng, -3.0..3.0),
                            rand::Rng::gen_range(&mut rng, -0.26..0.26),
                        ]
                    })
                    .collect()
            }
        },
    };
    render_tree_report(tree, &dir, Some(&pool))?;
    if matches!(config.environment, EnvBlock::Cartpole) {
        let fifteen = 15f64.to_radians();
        let report = sensitivity_report(tree, &[(-3.0, 3.0), (-fifteen, fifteen)], 101)?;
        let text = serde_json::json!({
            "scores": report.scores,
            "misalignment_flag": report.misalignment_flag,
        });
        let path = dir.join("sensitivity.json");
        std::fs::write(&path, serde_json::to_string_pretty(&text).unwrap())
            .map_err(|e| DdtError::io(format!("writing {}", path.display()), e))?;
    }
    Ok(dir)
}
