//! Interpretability artifacts: activation heatmaps, synthetic traces,
//! reachability reports, and per-dimension sensitivity scores.

pub mod report;

use crate::error::{DdtError, Result};
use crate::tree::{internal_path_probs, InputShape, RewardDdt};

/// Default path-probability threshold below which a pool state is treated as
/// unable to reach a node.
pub const REACHABILITY_THRESHOLD: f64 = 1e-3;

/// Misalignment flag threshold: theta sensitivity must exceed x sensitivity
/// by this factor at every node. Calibrated on the acceptance run, not taken
/// from any external source of truth.
pub const MISALIGNMENT_RATIO: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub enum HeatmapAxes {
    /// Pixel-toggle map over an image; row/col are pixel coordinates.
    Pixels,
    /// Physical grid; row i spans `row_range`, column j spans `col_range`.
    Ranges { row_range: (f64, f64), col_range: (f64, f64) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub node_id: usize,
    /// values[row][col]
    pub values: Vec<Vec<f64>>,
    pub axes: HeatmapAxes,
}

impl Heatmap {
    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &self.values {
            for &v in row {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }
}

/// Pixel-toggle activation heatmap: for each pixel p, the change in the
/// node's left-routing probability between the all-zeros image and the
/// all-zeros image with pixel p set to 1.
pub fn pixel_toggle_heatmap(tree: &RewardDdt, node_id: usize) -> Result<Heatmap> {
    let (height, width) = match tree.spec.input_shape {
        InputShape::Image { channels: 1, height, width } => (height, width),
        _ => {
            return Err(DdtError::InvalidSpec(
                "pixel-toggle heatmaps need a single-channel image input".into(),
            ))
        }
    };
    if node_id >= tree.spec.internal_node_count() {
        return Err(DdtError::NodeOutOfRange { index: node_id, count: tree.spec.internal_node_count() });
    }
    let blank = vec![0.0; height * width];
    let base = tree.route_probability(node_id, &blank)?;
    let mut values = vec![vec![0.0; width]; height];
    let mut probe = blank;
    for r in 0..height {
        for c in 0..width {
            probe[r * width + c] = 1.0;
            values[r][c] = tree.route_probability(node_id, &probe)? - base;
            probe[r * width + c] = 0.0;
        }
    }
    Ok(Heatmap { node_id, values, axes: HeatmapAxes::Pixels })
}

/// Routing probability of a node over a 2D physical grid. Row i sweeps the
/// second input dimension (pole angle) from lo to hi; column j sweeps the
/// first (cart position).
pub fn grid_heatmap_2d(
    tree: &RewardDdt,
    node_id: usize,
    x_range: (f64, f64),
    theta_range: (f64, f64),
    resolution: usize,
) -> Result<Heatmap> {
    match tree.spec.input_shape {
        InputShape::Flat { len: 2 } => {}
        _ => return Err(DdtError::InvalidSpec("2D grid heatmaps need a 2-dim input".into())),
    }
    if node_id >= tree.spec.internal_node_count() {
        return Err(DdtError::NodeOutOfRange { index: node_id, count: tree.spec.internal_node_count() });
    }
    if resolution < 2 {
        return Err(DdtError::InvalidConfig("heatmap resolution must be >= 2".into()));
    }
    let lerp = |range: (f64, f64), i: usize| {
        range.0 + (range.1 - range.0) * i as f64 / (resolution - 1) as f64
    };
    let mut values = vec![vec![0.0; resolution]; resolution];
    for (i, row) in values.iter_mut().enumerate() {
        let theta = lerp(theta_range, i);
        for (j, v) in row.iter_mut().enumerate() {
            let x = lerp(x_range, j);
            *v = tree.route_probability(node_id, &[x, theta])?;
        }
    }
    Ok(Heatmap {
        node_id,
        values,
        axes: HeatmapAxes::Ranges { row_range: theta_range, col_range: x_range },
    })
}

/// The standard CartPole heatmap window: x in [-3, 3], theta within 15
/// degrees, 201x201 cells.
pub fn default_cartpole_heatmap(tree: &RewardDdt, node_id: usize) -> Result<Heatmap> {
    let fifteen = 15f64.to_radians();
    grid_heatmap_2d(tree, node_id, (-3.0, 3.0), (-fifteen, fifteen), 201)
}

/// Synthetic trace of a node: pool states that can reach it, ordered by
/// left-routing probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub node_id: usize,
    /// (pool index, left-routing probability), non-increasing in probability;
    /// pool order breaks ties.
    pub entries: Vec<(usize, f64)>,
    /// Pool states whose path probability fell below the threshold.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceOutcome {
    Trace(Trace),
    /// No pool state reaches the node: the dead-branch signal.
    Unreachable { node_id: usize, excluded: usize },
}

pub fn synthetic_trace(tree: &RewardDdt, node_id: usize, pool: &[Vec<f64>]) -> Result<TraceOutcome> {
    if node_id >= tree.spec.internal_node_count() {
        return Err(DdtError::NodeOutOfRange { index: node_id, count: tree.spec.internal_node_count() });
    }
    let mut entries = Vec::new();
    let mut excluded = 0;
    for (index, state) in pool.iter().enumerate() {
        let node_probs = tree.node_probs(state)?;
        let path = internal_path_probs(tree.spec.depth, &node_probs);
        if path[node_id] > REACHABILITY_THRESHOLD {
            entries.push((index, node_probs[node_id]));
        } else {
            excluded += 1;
        }
    }
    if entries.is_empty() {
        return Ok(TraceOutcome::Unreachable { node_id, excluded });
    }
    // stable sort: equal probabilities keep pool order
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    Ok(TraceOutcome::Trace(Trace { node_id, entries, excluded }))
}

/// Per-node, per-dimension routing sensitivity over a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    /// scores[node][dim] = mean |p(x + delta e_dim) - p(x)| / delta.
    pub scores: Vec<Vec<f64>>,
    /// For 2-dim inputs: true when dim-1 (theta) sensitivity exceeds
    /// MISALIGNMENT_RATIO times dim-0 (x) sensitivity at every node.
    pub misalignment_flag: Option<bool>,
}

pub fn sensitivity_report(
    tree: &RewardDdt,
    ranges: &[(f64, f64)],
    resolution: usize,
) -> Result<SensitivityReport> {
    let dims = match tree.spec.input_shape {
        InputShape::Flat { len } => len,
        InputShape::Image { .. } => {
            return Err(DdtError::InvalidSpec("sensitivity report needs a flat input".into()))
        }
    };
    if ranges.len() != dims {
        return Err(DdtError::ShapeMismatch { expected: dims, got: ranges.len() });
    }
    if dims == 0 || dims > 3 {
        return Err(DdtError::InvalidConfig("sensitivity report supports 1-3 input dims".into()));
    }
    if resolution < 2 {
        return Err(DdtError::InvalidConfig("sensitivity resolution must be >= 2".into()));
    }
    let node_count = tree.spec.internal_node_count();
    let spacing: Vec<f64> =
        ranges.iter().map(|r| (r.1 - r.0) / (resolution - 1) as f64).collect();
    let points = resolution.pow(dims as u32);
    let mut scores = vec![vec![0.0; dims]; node_count];
    let mut x = vec![0.0; dims];
    for flat in 0..points {
        let mut rest = flat;
        for d in 0..dims {
            let idx = rest % resolution;
            rest /= resolution;
            x[d] = ranges[d].0 + spacing[d] * idx as f64;
        }
        let base = tree.node_probs(&x)?;
        for d in 0..dims {
            let mut shifted = x.clone();
            shifted[d] += spacing[d];
            let moved = tree.node_probs(&shifted)?;
            for node in 0..node_count {
                scores[node][d] += (moved[node] - base[node]).abs() / spacing[d];
            }
        }
    }
    for row in scores.iter_mut() {
        for s in row.iter_mut() {
            *s /= points as f64;
        }
    }
    let misalignment_flag = (dims == 2).then(|| {
        scores
            .iter()
            .all(|row| row[1] > MISALIGNMENT_RATIO * row[0])
    });
    Ok(SensitivityReport { scores, misalignment_flag })
}
