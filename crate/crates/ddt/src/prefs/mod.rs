//! Random-policy trajectory generation, synthetic preference labeling, and
//! dataset assembly.

pub mod container;

use crate::env::cartpole::{CartPoleAction, CartPoleEnv, StartMode};
use crate::env::gridworld::{GridworldMdp, ALL_ACTIONS};
use crate::error::{DdtError, Result};
use crate::train::{PreferencePair, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How many times a pair slot may be redrawn after ties before giving up.
const TIE_RETRY_CEILING: usize = 10_000;

/// Ground-truth preference oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelerSpec {
    /// Per-state reward 1 iff cart position and pole angle both lie inside
    /// their ranges, else 0.
    CartPoleBox { x_range: [f64; 2], theta_range: [f64; 2] },
    /// Per-state reward equals the cell's digit value.
    DigitSum,
}

impl LabelerSpec {
    /// The standard success box: x in [-2.4, 2.4], theta within 12 degrees.
    pub fn cartpole_box() -> LabelerSpec {
        let twelve_deg = 12f64.to_radians();
        LabelerSpec::CartPoleBox { x_range: [-2.4, 2.4], theta_range: [-twelve_deg, twelve_deg] }
    }
}

/// A rollout paired with the per-state ground-truth signal the labeler needs.
/// `obs` feed the reward model; `gt_values` are never exposed to it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub obs: Vec<Vec<f64>>,
    pub gt_values: Vec<f64>,
}

impl RawTrajectory {
    pub fn gt_return(&self) -> f64 {
        self.gt_values.iter().sum()
    }
}

/// Rolls out a uniformly random policy in CartPole, recording the (x, theta)
/// observation at each of `length` steps.
pub fn rollout_cartpole(
    env: &CartPoleEnv,
    labeler: &LabelerSpec,
    mode: StartMode,
    length: usize,
    rng: &mut ChaCha8Rng,
) -> RawTrajectory {
    assert!(length >= 1);
    let (x_range, theta_range) = match labeler {
        LabelerSpec::CartPoleBox { x_range, theta_range } => (*x_range, *theta_range),
        LabelerSpec::DigitSum => panic!("digit-sum labeler cannot score CartPole states"),
    };
    let mut state = env.reset(mode, rng);
    let mut obs = Vec::with_capacity(length);
    let mut gt_values = Vec::with_capacity(length);
    for _ in 0..length {
        obs.push(state.observation().to_vec());
        let inside = state.x >= x_range[0]
            && state.x <= x_range[1]
            && state.theta >= theta_range[0]
            && state.theta <= theta_range[1];
        gt_values.push(if inside { 1.0 } else { 0.0 });
        let action =
            if rng.gen::<bool>() { CartPoleAction::PushRight } else { CartPoleAction::PushLeft };
        state = env.step(state, action);
    }
    RawTrajectory { obs, gt_values }
}

/// Random walk on the gridworld from `start`, recording each visited cell's
/// image and digit value.
pub fn rollout_gridworld(
    mdp: &GridworldMdp,
    start: crate::env::gridworld::Cell,
    length: usize,
    rng: &mut ChaCha8Rng,
) -> RawTrajectory {
    assert!(length >= 1);
    let mut cell = start;
    let mut obs = Vec::with_capacity(length);
    let mut gt_values = Vec::with_capacity(length);
    for _ in 0..length {
        obs.push(mdp.image(cell).to_vec());
        gt_values.push(mdp.reward(cell));
        let action = ALL_ACTIONS[rng.gen_range(0..4)];
        cell = mdp.step(cell, action, rng);
    }
    RawTrajectory { obs, gt_values }
}

/// Compares ground-truth returns and orders the pair worse-then-better.
/// Returns None on an exact tie (the caller discards and redraws).
pub fn label_pair(a: RawTrajectory, b: RawTrajectory) -> Result<Option<PreferencePair>> {
    if a.obs.len() != b.obs.len() {
        return Err(DdtError::ShapeMismatch { expected: a.obs.len(), got: b.obs.len() });
    }
    let (ra, rb) = (a.gt_return(), b.gt_return());
    let to_traj = |t: RawTrajectory, r: f64| Trajectory { states: t.obs, gt_return: Some(r) };
    if ra > rb {
        Ok(Some(PreferencePair { worse: to_traj(b, rb), better: to_traj(a, ra) }))
    } else if rb > ra {
        Ok(Some(PreferencePair { worse: to_traj(a, ra), better: to_traj(b, rb) }))
    } else {
        Ok(None)
    }
}

/// What generated a dataset; enough to regenerate it bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub env: String,
    pub labeler: LabelerSpec,
    pub seed: u64,
    pub trajectory_length: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub train: Vec<PreferencePair>,
    pub validation: Vec<PreferencePair>,
    pub provenance: Provenance,
}

/// Each pair slot gets its own RNG stream derived from (seed, pair index), so
/// generation order and parallel scheduling cannot change the output.
fn pair_rng(seed: u64, pair_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair_index.wrapping_add(1));
    rng
}

fn round_pair_to_f32(pair: &mut PreferencePair) {
    for traj in [&mut pair.worse, &mut pair.better] {
        for state in traj.states.iter_mut() {
            for v in state.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

fn collect_pairs<F>(total: usize, seed: u64, mut draw: F) -> Result<Vec<PreferencePair>>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<Option<PreferencePair>>,
{
    let mut pairs = Vec::with_capacity(total);
    for index in 0..total as u64 {
        let mut rng = pair_rng(seed, index);
        let mut attempts = 0;
        loop {
            match draw(&mut rng)? {
                Some(mut pair) => {
                    // observations are persisted as f32; quantize up front so
                    // the in-memory dataset and its container agree bit-exactly
                    round_pair_to_f32(&mut pair);
                    pairs.push(pair);
                    break;
                }
                None => {
                    attempts += 1;
                    if attempts >= TIE_RETRY_CEILING {
                        return Err(DdtError::InvalidConfig(format!(
                            "labeler tied {TIE_RETRY_CEILING} consecutive draws for pair {index}"
                        )));
                    }
                }
            }
        }
    }
    Ok(pairs)
}

/// Builds a CartPole preference dataset. Trajectories within a pair use
/// independent in-distribution resets.
pub fn build_cartpole_dataset(
    env: &CartPoleEnv,
    labeler: &LabelerSpec,
    train_pairs: usize,
    val_pairs: usize,
    length: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    if train_pairs == 0 || val_pairs == 0 {
        return Err(DdtError::InvalidConfig("pair counts must be >= 1".into()));
    }
    let draw = |rng: &mut ChaCha8Rng| {
        let a = rollout_cartpole(env, labeler, StartMode::InDistribution, length, rng);
        let b = rollout_cartpole(env, labeler, StartMode::InDistribution, length, rng);
        label_pair(a, b)
    };
    let all = collect_pairs(train_pairs + val_pairs, seed, draw)?;
    let mut all = all;
    let validation = all.split_off(train_pairs);
    Ok(PreferenceDataset {
        train: all,
        validation,
        provenance: Provenance {
            env: "cartpole".into(),
            labeler: labeler.clone(),
            seed,
            trajectory_length: length,
            train_pairs,
            val_pairs,
        },
    })
}

/// Builds a gridworld preference dataset. The two trajectories of a pair
/// share a uniformly random start cell.
pub fn build_gridworld_dataset(
    mdp: &GridworldMdp,
    train_pairs: usize,
    val_pairs: usize,
    length: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    if train_pairs == 0 || val_pairs == 0 {
        return Err(DdtError::InvalidConfig("pair counts must be >= 1".into()));
    }
    let draw = |rng: &mut ChaCha8Rng| {
        let start = mdp.random_cell(rng);
        let a = rollout_gridworld(mdp, start, length, rng);
        let b = rollout_gridworld(mdp, start, length, rng);
        label_pair(a, b)
    };
    let all = collect_pairs(train_pairs + val_pairs, seed, draw)?;
    let mut all = all;
    let validation = all.split_off(train_pairs);
    Ok(PreferenceDataset {
        train: all,
        validation,
        provenance: Provenance {
            env: format!("gridworld{}x{}", mdp.rows, mdp.cols),
            labeler: LabelerSpec::DigitSum,
            seed,
            trajectory_length: length,
            train_pairs,
            val_pairs,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_glyphs;
    use crate::env::gridworld::{gridworld_make, Cell};

    #[test]
    fn cartpole_rollout_shapes_and_determinism() {
        let env = CartPoleEnv::default();
        let labeler = LabelerSpec::cartpole_box();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rollout_cartpole(&env, &labeler, StartMode::InDistribution, 200, &mut rng);
        assert_eq!(t.obs.len(), 200);
        assert!(t.obs.iter().all(|o| o.len() == 2));
        let again = rollout_cartpole(
            &env,
            &labeler,
            StartMode::InDistribution,
            200,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(
            t,
            rollout_cartpole(
                &env,
                &labeler,
                StartMode::InDistribution,
                200,
                &mut ChaCha8Rng::seed_from_u64(0)
            )
        );
        assert_eq!(t, again);
    }

    #[test]
    fn gridworld_rollout_shapes() {
        let digits = [0u8, 1, 2, 3];
        let pool = synthetic_glyphs(&digits, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let mdp = gridworld_make(5, &digits, &pool, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = rollout_gridworld(&mdp, Cell { row: 2, col: 2 }, 5, &mut rng);
        assert_eq!(t.obs.len(), 5);
        assert!(t.obs.iter().all(|o| o.len() == 28 * 28));
        assert_eq!(t.gt_values.len(), 5);
    }

    #[test]
    fn box_labeler_prefers_inside_trajectory() {
        // one trajectory fully inside the box, one fully outside
        let inside = RawTrajectory {
            obs: vec![vec![0.0, 0.0]; 200],
            gt_values: vec![1.0; 200],
        };
        let outside = RawTrajectory {
            obs: vec![vec![3.0, 0.0]; 200],
            gt_values: vec![0.0; 200],
        };
        let pair = label_pair(outside.clone(), inside.clone()).unwrap().unwrap();
        assert_eq!(pair.better.gt_return, Some(200.0));
        assert_eq!(pair.worse.gt_return, Some(0.0));
        // order of arguments must not matter
        let pair2 = label_pair(inside, outside).unwrap().unwrap();
        assert_eq!(pair2.better.gt_return, Some(200.0));
    }

    #[test]
    fn digit_sum_labeler_and_tie() {
        let threes = RawTrajectory {
            obs: vec![vec![0.5; 4]; 5],
            gt_values: vec![3.0; 5],
        };
        let zeros = RawTrajectory {
            obs: vec![vec![0.1; 4]; 5],
            gt_values: vec![0.0; 5],
        };
        let pair = label_pair(threes.clone(), zeros).unwrap().unwrap();
        assert_eq!(pair.better.gt_return, Some(15.0));
        assert_eq!(pair.worse.gt_return, Some(0.0));
        assert!(label_pair(threes.clone(), threes.clone()).unwrap().is_none());
        let short = RawTrajectory { obs: vec![vec![0.0; 4]; 3], gt_values: vec![0.0; 3] };
        assert!(label_pair(threes, short).is_err());
    }

    #[test]
    fn cartpole_dataset_counts_and_strict_preference() {
        let env = CartPoleEnv::default();
        let labeler = LabelerSpec::cartpole_box();
        let ds = build_cartpole_dataset(&env, &labeler, 30, 10, 20, 7).unwrap();
        assert_eq!(ds.train.len(), 30);
        assert_eq!(ds.validation.len(), 10);
        for p in ds.train.iter().chain(&ds.validation) {
            assert!(p.better.gt_return.unwrap() > p.worse.gt_return.unwrap());
        }
        let again = build_cartpole_dataset(&env, &labeler, 30, 10, 20, 7).unwrap();
        assert_eq!(ds, again);
        let other = build_cartpole_dataset(&env, &labeler, 30, 10, 20, 8).unwrap();
        assert_ne!(ds, other);
    }

    #[test]
    fn gridworld_dataset_counts() {
        let digits = [0u8, 1, 2, 3];
        let pool = synthetic_glyphs(&digits, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let mdp = gridworld_make(5, &digits, &pool, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let ds = build_gridworld_dataset(&mdp, 20, 5, 5, 11).unwrap();
        assert_eq!(ds.train.len(), 20);
        assert_eq!(ds.validation.len(), 5);
        for p in ds.train.iter().chain(&ds.validation) {
            assert!(p.better.gt_return.unwrap() > p.worse.gt_return.unwrap());
            assert_eq!(p.better.states.len(), 5);
        }
    }

    #[test]
    fn all_zero_grid_cannot_tie_forever() {
        // a 1x1 grid ties every pair; generation must abort, not spin
        let digits = [0u8, 1];
        let pool = synthetic_glyphs(&digits, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let mut mdp = gridworld_make(1, &digits, &pool, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        mdp.digit_grid[0][0] = 1; // constant reward => every pair ties
        let err = build_gridworld_dataset(&mdp, 2, 1, 3, 0);
        assert!(err.is_err());
    }

    #[test]
    fn cartpole_position_rarely_decides() {
        // the bias behind silent misalignment: the cart almost never leaves
        // [-2.4, 2.4] within 20 steps, so pole angle carries the labels
        let env = CartPoleEnv::default();
        let labeler = LabelerSpec::cartpole_box();
        let ds = build_cartpole_dataset(&env, &labeler, 1800, 200, 20, 3).unwrap();
        let mut in_box = 0usize;
        let mut total = 0usize;
        for p in ds.train.iter().chain(&ds.validation) {
            total += 1;
            let all_inside = p
                .worse
                .states
                .iter()
                .chain(&p.better.states)
                .all(|s| s[0] >= -2.4 && s[0] <= 2.4);
            if all_inside {
                in_box += 1;
            }
        }
        assert!(in_box as f64 / total as f64 >= 0.95);
    }
}
