//! `DDTP` binary container for preference datasets.
//!
//! Layout, all integers little-endian:
//!   magic `DDTP` | version u16 | manifest length u32 | manifest JSON |
//!   observation blocks | crc32 u32
//! One block per trajectory, pair-ordered (worse then better), train split
//! first: block = element count u32 | raw f32 values. The CRC covers every
//! byte before it.

use super::{PreferenceDataset, Provenance};
use crate::error::{DdtError, Result};
use crate::train::{PreferencePair, Trajectory};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DATASET_MAGIC: [u8; 4] = *b"DDTP";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    provenance: Provenance,
    /// Per-state observation length (2 for CartPole, 784 for gridworld).
    obs_len: usize,
    /// Ground-truth returns, pair-ordered (worse then better), train first.
    gt_returns: Vec<f64>,
}

fn traj_iter(ds: &PreferenceDataset) -> impl Iterator<Item = &Trajectory> {
    ds.train
        .iter()
        .chain(&ds.validation)
        .flat_map(|p| [&p.worse, &p.better])
}

/// Serializes a dataset to the container format.
pub fn dataset_to_bytes(ds: &PreferenceDataset) -> Result<Vec<u8>> {
    let obs_len = ds
        .train
        .first()
        .or(ds.validation.first())
        .map(|p| p.worse.states.first().map_or(0, |s| s.len()))
        .ok_or(DdtError::Empty("dataset"))?;
    let manifest = DatasetManifest {
        provenance: ds.provenance.clone(),
        obs_len,
        gt_returns: traj_iter(ds).map(|t| t.gt_return.unwrap_or(f64::NAN)).collect(),
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| DdtError::Format(e.to_string()))?;

    let mut out = Vec::new();
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    for traj in traj_iter(ds) {
        let count: usize = traj.states.iter().map(|s| s.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for state in &traj.states {
            if state.len() != obs_len {
                return Err(DdtError::ShapeMismatch { expected: obs_len, got: state.len() });
            }
            for &v in state {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| DdtError::Format(format!("dataset file: truncated reading {what}")))?;
        self.pos += n;
        Ok(slice)
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a container, verifying magic, version, checksum, and counts.
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<PreferenceDataset> {
    if bytes.len() < 4 + 2 + 4 + 4 {
        return Err(DdtError::Format("dataset file: too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(DdtError::Format(format!(
            "dataset file: checksum mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})"
        )));
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(DdtError::Format("dataset file: bad magic".into()));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(DdtError::UnsupportedVersion(u32::from(version)));
    }
    let manifest_len = cur.u32_le("manifest length")? as usize;
    let manifest: DatasetManifest = serde_json::from_slice(cur.take(manifest_len, "manifest")?)
        .map_err(|e| DdtError::Format(format!("dataset manifest: {e}")))?;

    let total_pairs = manifest.provenance.train_pairs + manifest.provenance.val_pairs;
    if manifest.gt_returns.len() != total_pairs * 2 {
        return Err(DdtError::Format(format!(
            "dataset manifest: {} returns for {} trajectories",
            manifest.gt_returns.len(),
            total_pairs * 2
        )));
    }

    let mut trajectories = Vec::with_capacity(total_pairs * 2);
    for (i, &gt_return) in manifest.gt_returns.iter().enumerate() {
        let count = cur.u32_le("block length")? as usize;
        if manifest.obs_len == 0 || count % manifest.obs_len != 0 {
            return Err(DdtError::Format(format!(
                "dataset file: block {i} length {count} not a multiple of obs_len {}",
                manifest.obs_len
            )));
        }
        let raw = cur.take(count * 4, "observation block")?;
        let states: Vec<Vec<f64>> = raw
            .chunks_exact(4 * manifest.obs_len)
            .map(|state| {
                state
                    .chunks_exact(4)
                    .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                    .collect()
            })
            .collect();
        trajectories.push(Trajectory { states, gt_return: Some(gt_return) });
    }
    if cur.pos != body.len() {
        return Err(DdtError::Format(format!(
            "dataset file: {} trailing bytes",
            body.len() - cur.pos
        )));
    }

    let mut pairs: Vec<PreferencePair> = trajectories
        .chunks_exact(2)
        .map(|c| PreferencePair { worse: c[0].clone(), better: c[1].clone() })
        .collect();
    let validation = pairs.split_off(manifest.provenance.train_pairs);
    Ok(PreferenceDataset { train: pairs, validation, provenance: manifest.provenance })
}

pub fn save_dataset(ds: &PreferenceDataset, path: &Path) -> Result<()> {
    let bytes = dataset_to_bytes(ds)?;
    std::fs::write(path, bytes)
        .map_err(|e| DdtError::io(format!("writing {}", path.display()), e))
}

pub fn load_dataset(path: &Path) -> Result<PreferenceDataset> {
    let bytes = std::fs::read(path)
        .map_err(|e| DdtError::io(format!("reading {}", path.display()), e))?;
    dataset_from_bytes(&bytes)
}
