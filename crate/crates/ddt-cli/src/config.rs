//! Experiment configuration: JSON schema with exhaustive validation.
//!
//! Validation walks the raw JSON first and collects every offending key
//! (unknown or missing) in one pass, so a bad config reports all problems at
//! once instead of one per run.

use ddt::tree::{ConvConfig, InputShape, LeafKind, NodeKind, TreeSpec};
use ddt::{DdtError, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvBlock,
    pub tree: TreeBlock,
    pub training: TrainingBlock,
    pub preferences: PrefsBlock,
    #[serde(default)]
    pub rl: RlBlock,
    pub output_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvBlock {
    Cartpole,
    MnistGrid {
        size: usize,
        digits: Vec<u8>,
        /// "synthetic", "mnist", or "auto" (mnist when present, else synthetic).
        #[serde(default = "default_data_source")]
        data_source: String,
        seed: u64,
        #[serde(default = "default_glyph_variants")]
        glyph_variants: usize,
    },
}

fn default_data_source() -> String {
    "auto".to_string()
}

fn default_glyph_variants() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeBlock {
    pub depth: usize,
    pub node_kind: String,
    pub leaf: LeafBlock,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeafBlock {
    Crl { rewards: Vec<f64> },
    Il { r_min: f64, r_max: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Penalty coefficient lambda_0; absent or null disables the penalty.
    #[serde(default)]
    pub penalty_lambda: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefsBlock {
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub length: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlBlock {
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub iterations: usize,
    pub episodes_per_batch: usize,
    pub hidden: usize,
    pub lr: f64,
    /// Gridworld only: how many MDPs the percentage is averaged across.
    pub mdps: usize,
}

impl Default for RlBlock {
    fn default() -> Self {
        RlBlock {
            seeds: vec![0, 1, 2, 3, 4],
            episodes: 100,
            iterations: 150,
            episodes_per_batch: 16,
            hidden: 32,
            lr: 0.01,
            mdps: 20,
        }
    }
}

/// Allowed keys for one JSON object level.
struct Schema {
    required: &'static [&'static str],
    optional: &'static [&'static str],
}

fn check_object(
    value: &serde_json::Value,
    path: &str,
    schema: &Schema,
    problems: &mut Vec<String>,
) -> bool {
    let obj = match value.as_object() {
        Some(obj) => obj,
        None => {
            problems.push(format!("{path}: expected an object"));
            return false;
        }
    };
    for key in obj.keys() {
        if !schema.required.contains(&key.as_str()) && !schema.optional.contains(&key.as_str()) {
            problems.push(format!("{path}.{key}: unknown key"));
        }
    }
    for key in schema.required {
        if !obj.contains_key(*key) {
            problems.push(format!("{path}.{key}: missing required key"));
        }
    }
    true
}

fn check_tagged(
    value: &serde_json::Value,
    path: &str,
    variants: &[(&str, Schema)],
    problems: &mut Vec<String>,
) {
    let obj = match value.as_object() {
        Some(obj) => obj,
        None => {
            problems.push(format!("{path}: expected an object"));
            return;
        }
    };
    let kind = match obj.get("kind").and_then(|k| k.as_str()) {
        Some(kind) => kind,
        None => {
            problems.push(format!("{path}.kind: missing required key"));
            return;
        }
    };
    match variants.iter().find(|(name, _)| *name == kind) {
        Some((_, schema)) => {
            check_object(value, path, schema, problems);
        }
        None => {
            let names: Vec<&str> = variants.iter().map(|(n, _)| *n).collect();
            problems.push(format!("{path}.kind: unknown variant {kind:?} (expected one of {names:?})"));
        }
    }
}

/// Validates the raw JSON structure, returning every offending key at once.
pub fn validate_schema(value: &serde_json::Value) -> Result<()> {
    let mut problems = Vec::new();
    let top = Schema {
        required: &["environment", "tree", "training", "preferences", "output_dir"],
        optional: &["rl"],
    };
    if !check_object(value, "config", &top, &mut problems) {
        return Err(DdtError::InvalidConfig(problems.join("; ")));
    }
    let obj = value.as_object().unwrap();

    if let Some(env) = obj.get("environment") {
        check_tagged(
            env,
            "environment",
            &[
                ("cartpole", Schema { required: &["kind"], optional: &[] }),
                (
                    "mnist_grid",
                    Schema {
                        required: &["kind", "size", "digits", "seed"],
                        optional: &["data_source", "glyph_variants"],
                    },
                ),
            ],
            &mut problems,
        );
    }
    if let Some(tree) = obj.get("tree") {
        check_object(
            tree,
            "tree",
            &Schema { required: &["depth", "node_kind", "leaf"], optional: &["temperature"] },
            &mut problems,
        );
        if let Some(leaf) = tree.get("leaf") {
            check_tagged(
                leaf,
                "tree.leaf",
                &[
                    ("crl", Schema { required: &["kind", "rewards"], optional: &[] }),
                    ("il", Schema { required: &["kind", "r_min", "r_max"], optional: &[] }),
                ],
                &mut problems,
            );
        }
    }
    if let Some(training) = obj.get("training") {
        check_object(
            training,
            "training",
            &Schema {
                required: &["lr", "weight_decay", "epochs", "batch_size", "seed"],
                optional: &["penalty_lambda"],
            },
            &mut problems,
        );
    }
    if let Some(prefs) = obj.get("preferences") {
        check_object(
            prefs,
            "preferences",
            &Schema { required: &["train_pairs", "val_pairs", "length", "seed"], optional: &[] },
            &mut problems,
        );
    }
    if let Some(rl) = obj.get("rl") {
        check_object(
            rl,
            "rl",
            &Schema {
                required: &[],
                optional: &[
                    "seeds",
                    "episodes",
                    "iterations",
                    "episodes_per_batch",
                    "hidden",
                    "lr",
                    "mdps",
                ],
            },
            &mut problems,
        );
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(DdtError::InvalidConfig(problems.join("; ")))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DdtError::io(format!("reading config {}", path.display()), e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| DdtError::InvalidConfig(format!("config {}: {e}", path.display())))?;
    validate_schema(&value)?;
    let config: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| DdtError::InvalidConfig(format!("config {}: {e}", path.display())))?;
    config.validate_values()?;
    Ok(config)
}

impl ExperimentConfig {
    /// Semantic checks beyond structure, again reporting all problems at once.
    pub fn validate_values(&self) -> Result<()> {
        let mut problems = Vec::new();
        match &self.environment {
            EnvBlock::Cartpole => {}
            EnvBlock::MnistGrid { size, digits, data_source, .. } => {
                if *size == 0 {
                    problems.push("environment.size: must be >= 1".to_string());
                }
                if digits.is_empty() || digits.iter().any(|&d| d > 9) {
                    problems.push("environment.digits: need a nonempty subset of 0..=9".to_string());
                }
                if !["auto", "synthetic", "mnist"].contains(&data_source.as_str()) {
                    problems.push(format!(
                        "environment.data_source: {data_source:?} not one of auto/synthetic/mnist"
                    ));
                }
            }
        }
        if !["simple", "sophisticated"].contains(&self.tree.node_kind.as_str()) {
            problems.push(format!(
                "tree.node_kind: {:?} not one of simple/sophisticated",
                self.tree.node_kind
            ));
        }
        if self.training.lr <= 0.0 {
            problems.push("training.lr: must be > 0".to_string());
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            problems.push("training.epochs/batch_size: must be >= 1".to_string());
        }
        if self.preferences.train_pairs == 0 || self.preferences.val_pairs == 0 {
            problems.push("preferences.train_pairs/val_pairs: must be >= 1".to_string());
        }
        if self.preferences.length == 0 {
            problems.push("preferences.length: must be >= 1".to_string());
        }
        if self.rl.seeds.is_empty() {
            problems.push("rl.seeds: must be nonempty".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DdtError::InvalidConfig(problems.join("; ")))
        }
    }

    /// Builds the TreeSpec this config describes.
    pub fn tree_spec(&self) -> Result<TreeSpec> {
        let input_shape = match &self.environment {
            EnvBlock::Cartpole => InputShape::Flat { len: 2 },
            EnvBlock::MnistGrid { .. } => InputShape::Image { channels: 1, height: 28, width: 28 },
        };
        let node_kind = match self.tree.node_kind.as_str() {
            "simple" => NodeKind::Simple,
            "sophisticated" => NodeKind::Sophisticated,
            other => {
                return Err(DdtError::InvalidConfig(format!("unknown node kind {other:?}")))
            }
        };
        let leaf_kind = match &self.tree.leaf {
            LeafBlock::Crl { rewards } => LeafKind::Crl { rewards: rewards.clone() },
            LeafBlock::Il { r_min, r_max } => LeafKind::Il { r_min: *r_min, r_max: *r_max },
        };
        let conv = match node_kind {
            NodeKind::Sophisticated => Some(ConvConfig::mnist()),
            NodeKind::Simple => None,
        };
        let spec = TreeSpec {
            depth: self.tree.depth,
            input_shape,
            node_kind,
            leaf_kind,
            temperature: self.tree.temperature,
            conv,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "environment": {"kind": "cartpole"},
            "tree": {"depth": 2, "node_kind": "simple",
                     "leaf": {"kind": "crl", "rewards": [0.0, 1.0]}},
            "training": {"lr": 0.001, "weight_decay": 0.001, "epochs": 2,
                         "batch_size": 8, "seed": 0},
            "preferences": {"train_pairs": 10, "val_pairs": 5, "length": 20, "seed": 1},
            "output_dir": "out"
        })
    }

    #[test]
    fn accepts_minimal_config() {
        let value = minimal();
        validate_schema(&value).unwrap();
        let config: ExperimentConfig = serde_json::from_value(value).unwrap();
        config.validate_values().unwrap();
        config.tree_spec().unwrap();
    }

    #[test]
    fn reports_all_offending_keys_at_once() {
        let mut value = minimal();
        value["bogus"] = serde_json::json!(1);
        value["tree"]["extra"] = serde_json::json!(2);
        value["training"].as_object_mut().unwrap().remove("lr");
        let err = validate_schema(&value).unwrap_err().to_string();
        assert!(err.contains("config.bogus"), "{err}");
        assert!(err.contains("tree.extra"), "{err}");
        assert!(err.contains("training.lr"), "{err}");
    }

    #[test]
    fn rejects_unknown_variant() {
        let mut value = minimal();
        value["environment"] = serde_json::json!({"kind": "atari"});
        let err = validate_schema(&value).unwrap_err().to_string();
        assert!(err.contains("environment.kind"), "{err}");
    }

    #[test]
    fn semantic_errors_accumulate() {
        let mut value = minimal();
        value["training"]["lr"] = serde_json::json!(0.0);
        value["preferences"]["length"] = serde_json::json!(0);
        validate_schema(&value).unwrap();
        let config: ExperimentConfig = serde_json::from_value(value).unwrap();
        let err = config.validate_values().unwrap_err().to_string();
        assert!(err.contains("training.lr"), "{err}");
        assert!(err.contains("preferences.length"), "{err}");
    }
}
