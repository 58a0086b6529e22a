//! Renders interpretability artifacts to disk: PGM heatmaps, trace strips,
//! leaf summaries, and a JSON index describing the bundle.

use super::{
    default_cartpole_heatmap, pixel_toggle_heatmap, synthetic_trace, Heatmap, TraceOutcome,
};
use crate::error::{DdtError, Result};
use crate::tree::{InputShape, RewardDdt};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// How many states appear at each end of a rendered trace strip.
pub const TRACE_STRIP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub node_id: usize,
    pub artifact_type: String,
    pub file: String,
    pub value_min: f64,
    pub value_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceFile {
    node_id: usize,
    /// (pool index, left-routing probability), descending.
    entries: Vec<(usize, f64)>,
    excluded: usize,
    unreachable: bool,
    /// True when the pool had fewer than 2k states for the strip.
    truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LeafSummary {
    leaf: usize,
    q: Vec<f64>,
    soft_reward: f64,
}

/// Writes an 8-bit binary PGM, mapping [lo, hi] linearly onto [0, 255].
/// A constant map renders as black.
pub fn write_pgm(path: &Path, values: &[Vec<f64>], lo: f64, hi: f64) -> Result<()> {
    let height = values.len();
    let width = values.first().map_or(0, |r| r.len());
    if height == 0 || width == 0 {
        return Err(DdtError::Empty("pgm image"));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let span = hi - lo;
    for row in values {
        if row.len() != width {
            return Err(DdtError::ShapeMismatch { expected: width, got: row.len() });
        }
        for &v in row {
            let byte = if span > 0.0 {
                (((v - lo) / span * 255.0).round().clamp(0.0, 255.0)) as u8
            } else {
                0
            };
            out.push(byte);
        }
    }
    std::fs::write(path, out).map_err(|e| DdtError::io(format!("writing {}", path.display()), e))
}

fn heatmap_entry(dir: &Path, map: &Heatmap, artifact_type: &str) -> Result<IndexEntry> {
    let (lo, hi) = map.min_max();
    let file = format!("node{}_{artifact_type}.pgm", map.node_id);
    write_pgm(&dir.join(&file), &map.values, lo, hi)?;
    Ok(IndexEntry {
        node_id: map.node_id,
        artifact_type: artifact_type.to_string(),
        file,
        value_min: lo,
        value_max: hi,
    })
}

/// Renders a strip of pool images side by side: the first k and last k trace
/// states. Only available for single-channel image inputs.
fn render_trace_strip(
    dir: &Path,
    node_id: usize,
    trace_entries: &[(usize, f64)],
    pool: &[Vec<f64>],
    height: usize,
    width: usize,
) -> Result<IndexEntry> {
    let k = TRACE_STRIP_K;
    let selected: Vec<usize> = if trace_entries.len() <= 2 * k {
        trace_entries.iter().map(|e| e.0).collect()
    } else {
        trace_entries[..k]
            .iter()
            .chain(&trace_entries[trace_entries.len() - k..])
            .map(|e| e.0)
            .collect()
    };
    let mut strip = vec![vec![0.0; width * selected.len()]; height];
    for (slot, &pool_index) in selected.iter().enumerate() {
        let img = &pool[pool_index];
        for r in 0..height {
            for c in 0..width {
                strip[r][slot * width + c] = img[r * width + c];
            }
        }
    }
    let file = format!("node{node_id}_trace_strip.pgm");
    write_pgm(&dir.join(&file), &strip, 0.0, 1.0)?;
    Ok(IndexEntry {
        node_id,
        artifact_type: "trace_strip".to_string(),
        file,
        value_min: 0.0,
        value_max: 1.0,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| DdtError::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| DdtError::io(format!("writing {}", path.display()), e))
}

/// Writes the full report bundle for a tree: one heatmap per internal node,
/// per-node traces over `pool` (when given), leaf summaries, and `index.json`.
pub fn render_tree_report(
    tree: &RewardDdt,
    dir: &Path,
    pool: Option<&[Vec<f64>]>,
) -> Result<ReportIndex> {
    std::fs::create_dir_all(dir)
        .map_err(|e| DdtError::io(format!("creating {}", dir.display()), e))?;
    let mut entries = Vec::new();

    let image_side = match tree.spec.input_shape {
        InputShape::Image { channels: 1, height, width } => Some((height, width)),
        _ => None,
    };

    for node in 0..tree.spec.internal_node_count() {
        let map = match tree.spec.input_shape {
            InputShape::Image { channels: 1, .. } => Some(pixel_toggle_heatmap(tree, node)?),
            InputShape::Flat { len: 2 } => Some(default_cartpole_heatmap(tree, node)?),
            _ => None,
        };
        if let Some(map) = map {
            entries.push(heatmap_entry(dir, &map, "heatmap")?);
        }
        if let Some(pool) = pool {
            let outcome = synthetic_trace(tree, node, pool)?;
            let trace_file = match &outcome {
                TraceOutcome::Trace(trace) => TraceFile {
                    node_id: node,
                    entries: trace.entries.clone(),
                    excluded: trace.excluded,
                    unreachable: false,
                    truncated: trace.entries.len() < 2 * TRACE_STRIP_K,
                },
                TraceOutcome::Unreachable { node_id, excluded } => TraceFile {
                    node_id: *node_id,
                    entries: Vec::new(),
                    excluded: *excluded,
                    unreachable: true,
                    truncated: false,
                },
            };
            let file = format!("node{node}_trace.json");
            write_json(&dir.join(&file), &trace_file)?;
            let (lo, hi) = trace_file
                .entries
                .iter()
                .map(|e| e.1)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p), hi.max(p))
                });
            entries.push(IndexEntry {
                node_id: node,
                artifact_type: "trace".to_string(),
                file,
                value_min: if lo.is_finite() { lo } else { 0.0 },
                value_max: if hi.is_finite() { hi } else { 0.0 },
            });
            if let (Some((h, w)), TraceOutcome::Trace(trace)) = (image_side, &outcome) {
                entries.push(render_trace_strip(dir, node, &trace.entries, pool, h, w)?);
            }
        }
    }

    let soft = tree.leaf_soft_rewards();
    let summaries: Vec<LeafSummary> = (0..tree.spec.leaf_count())
        .map(|leaf| LeafSummary {
            leaf,
            q: tree.leaf_distribution(leaf),
            soft_reward: soft[leaf],
        })
        .collect();
    write_json(&dir.join("leaves.json"), &summaries)?;
    entries.push(IndexEntry {
        node_id: 0,
        artifact_type: "leaf_summary".to_string(),
        file: "leaves.json".to_string(),
        value_min: soft.iter().copied().fold(f64::INFINITY, f64::min),
        value_max: soft.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });

    let index = ReportIndex { entries };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}
