//! Policy optimization and evaluation: exact finite-horizon planning for
//! gridworlds, REINFORCE for CartPole, and the evaluation metrics.

pub mod reinforce;

use crate::env::gridworld::{Action, Cell, GridworldMdp, ALL_ACTIONS};
use crate::error::{DdtError, Result};

/// Non-stationary tabular policy for a finite-horizon gridworld episode.
/// `actions[t][cell]` is the move taken at step t (cells in row-major order).
/// An episode of horizon H visits H cells and takes H-1 actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularPolicy {
    pub cols: usize,
    pub horizon: usize,
    pub actions: Vec<Vec<Action>>,
}

impl TabularPolicy {
    pub fn action(&self, step: usize, cell: Cell) -> Action {
        self.actions[step][cell.row * self.cols + cell.col]
    }
}

fn cell_of(index: usize, cols: usize) -> Cell {
    Cell { row: index / cols, col: index % cols }
}

/// Finite-horizon undiscounted value iteration over the exact transition
/// distributions. Returns the optimal non-stationary policy and the optimal
/// expected return from each start cell. Reward accrues on every visited
/// cell, including the start. Action ties break toward the lowest index.
pub fn value_iteration<F>(
    mdp: &GridworldMdp,
    reward_fn: F,
    horizon: usize,
) -> (TabularPolicy, Vec<f64>)
where
    F: Fn(Cell) -> f64,
{
    assert!(horizon >= 1);
    let n = mdp.cell_count();
    let rewards: Vec<f64> = (0..n).map(|i| reward_fn(cell_of(i, mdp.cols))).collect();

    // values[i] holds V_t; build up from V_1(s) = r(s)
    let mut values = rewards.clone();
    // action taken when t cells remain, for t = 2..=horizon; indexed so that
    // greedy[horizon - 1 - step] is the step-t row once reversed below
    let mut greedy_rows: Vec<Vec<Action>> = Vec::with_capacity(horizon.saturating_sub(1));
    for _t in 2..=horizon {
        let mut next = vec![0.0; n];
        let mut row = vec![Action::Left; n];
        for i in 0..n {
            let cell = cell_of(i, mdp.cols);
            let mut best = f64::NEG_INFINITY;
            let mut best_action = Action::Left;
            for &a in &ALL_ACTIONS {
                let q: f64 = mdp
                    .transition_dist(cell, a)
                    .into_iter()
                    .map(|(c, p)| p * values[c.row * mdp.cols + c.col])
                    .sum();
                if q > best {
                    best = q;
                    best_action = a;
                }
            }
            next[i] = rewards[i] + best;
            row[i] = best_action;
        }
        values = next;
        greedy_rows.push(row);
    }
    // greedy_rows[k] was computed with k+2 cells remaining; step t has
    // horizon - t cells remaining, so step order is the reverse
    greedy_rows.reverse();
    (
        TabularPolicy { cols: mdp.cols, horizon, actions: greedy_rows },
        values,
    )
}

/// Exact expected ground-truth return of a policy by forward dynamic
/// programming from a uniform random start cell. Only the MDP's digit reward
/// is consulted; learned models have no path into this function.
pub fn evaluate_policy_gridworld(mdp: &GridworldMdp, policy: &TabularPolicy) -> f64 {
    let n = mdp.cell_count();
    let mut dist = vec![1.0 / n as f64; n];
    let mut total = 0.0;
    for step in 0..policy.horizon {
        for i in 0..n {
            total += dist[i] * mdp.reward(cell_of(i, mdp.cols));
        }
        if step + 1 == policy.horizon {
            break;
        }
        let mut next = vec![0.0; n];
        for i in 0..n {
            if dist[i] == 0.0 {
                continue;
            }
            let cell = cell_of(i, mdp.cols);
            for (c, p) in mdp.transition_dist(cell, policy.action(step, cell)) {
                next[c.row * mdp.cols + c.col] += dist[i] * p;
            }
        }
        dist = next;
    }
    total
}

/// Exact expected ground-truth return of the uniform-random policy from a
/// uniform random start cell.
pub fn evaluate_random_policy_gridworld(mdp: &GridworldMdp, horizon: usize) -> f64 {
    let n = mdp.cell_count();
    let mut dist = vec![1.0 / n as f64; n];
    let mut total = 0.0;
    for step in 0..horizon {
        for i in 0..n {
            total += dist[i] * mdp.reward(cell_of(i, mdp.cols));
        }
        if step + 1 == horizon {
            break;
        }
        let mut next = vec![0.0; n];
        for i in 0..n {
            if dist[i] == 0.0 {
                continue;
            }
            let cell = cell_of(i, mdp.cols);
            for &a in &ALL_ACTIONS {
                for (c, p) in mdp.transition_dist(cell, a) {
                    next[c.row * mdp.cols + c.col] += dist[i] * p * 0.25;
                }
            }
        }
        dist = next;
    }
    total
}

/// Percentage of the optimal expected return a policy obtains.
pub fn pct_of_optimal(policy_return: f64, optimal_return: f64) -> Result<f64> {
    if optimal_return <= 0.0 {
        return Err(DdtError::InvalidConfig(format!(
            "cannot normalize by optimal return {optimal_return}"
        )));
    }
    Ok(100.0 * policy_return / optimal_return)
}

/// Interquartile mean: the mean of all values lying within the closed
/// [25th, 75th] percentile band, with linearly interpolated percentiles.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(DdtError::Empty("iqm input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |q: f64| -> f64 {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    let (q25, q75) = (pct(0.25), pct(0.75));
    let band: Vec<f64> = sorted.iter().copied().filter(|&v| v >= q25 && v <= q75).collect();
    if band.is_empty() {
        // Two well-separated samples leave nothing inside the closed band;
        // fall back to the interpolated median.
        return Ok(pct(0.5));
    }
    Ok(band.iter().sum::<f64>() / band.len() as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

/// Brute-force optimum: enumerates every non-stationary policy and evaluates
/// it by exact forward DP from a uniform start. Exponential; only usable on
/// tiny grids, as an independent check of `value_iteration`.
pub fn enumerate_optimal_return(mdp: &GridworldMdp, horizon: usize) -> f64 {
    let n = mdp.cell_count();
    let steps = horizon - 1;
    let mut best = f64::NEG_INFINITY;
    let table_size = n * steps;
    let combos = 4usize.pow(table_size as u32);
    for code in 0..combos {
        let mut c = code;
        let mut actions = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                row.push(ALL_ACTIONS[c % 4]);
                c /= 4;
            }
            actions.push(row);
        }
        let policy = TabularPolicy { cols: mdp.cols, horizon, actions };
        let value = evaluate_policy_gridworld(mdp, &policy);
        if value > best {
            best = value;
        }
    }
    best
}
