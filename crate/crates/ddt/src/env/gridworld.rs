//! MNIST gridworld: a grid of digit cells with slippery moves.

use crate::data::DigitPool;
use crate::error::{DdtError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SLIP_SUCCESS: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
}

pub const ALL_ACTIONS: [Action; 4] = [Action::Left, Action::Right, Action::Up, Action::Down];

/// Grid of digit-labeled cells. The true reward of a cell is its digit value;
/// the reward model only ever sees the cell's image.
#[derive(Debug, Clone)]
pub struct GridworldMdp {
    pub rows: usize,
    pub cols: usize,
    /// digit_grid[row][col] in the generating digit set.
    pub digit_grid: Vec<Vec<u8>>,
    /// cell_images[row][col] is a 28x28 image of digit_grid[row][col].
    pub cell_images: Vec<Vec<Vec<f64>>>,
    /// Index of each cell's image within its digit's pool.
    pub image_indices: Vec<Vec<usize>>,
    /// Success probability of a legal move.
    pub slip: f64,
}

/// JSON-serializable description of an MDP instance (images live in the
/// digit pool; only their indices are recorded).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct GridworldManifest {
    pub rows: usize,
    pub cols: usize,
    pub digit_grid: Vec<Vec<u8>>,
    pub image_indices: Vec<Vec<usize>>,
}

impl GridworldMdp {
    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn digit(&self, cell: Cell) -> u8 {
        self.digit_grid[cell.row][cell.col]
    }

    /// Ground-truth reward: the digit value.
    pub fn reward(&self, cell: Cell) -> f64 {
        f64::from(self.digit(cell))
    }

    pub fn image(&self, cell: Cell) -> &[f64] {
        &self.cell_images[cell.row][cell.col]
    }

    /// Target cell of a move, or None if it would leave the grid.
    pub fn neighbor(&self, cell: Cell, action: Action) -> Option<Cell> {
        let (dr, dc): (isize, isize) = match action {
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
        };
        let row = cell.row as isize + dr;
        let col = cell.col as isize + dc;
        if row < 0 || col < 0 || row >= self.rows as isize || col >= self.cols as isize {
            None
        } else {
            Some(Cell { row: row as usize, col: col as usize })
        }
    }

    /// Transition distribution: the chosen direction succeeds with
    /// probability 0.8, otherwise the agent stays put; moves off the grid
    /// are self-transitions with probability 1.
    pub fn transition_dist(&self, cell: Cell, action: Action) -> Vec<(Cell, f64)> {
        match self.neighbor(cell, action) {
            Some(target) => vec![(target, self.slip), (cell, 1.0 - self.slip)],
            None => vec![(cell, 1.0)],
        }
    }

    /// Samples the next cell.
    pub fn step<R: Rng>(&self, cell: Cell, action: Action, rng: &mut R) -> Cell {
        match self.neighbor(cell, action) {
            Some(target) if rng.gen::<f64>() < self.slip => target,
            _ => cell,
        }
    }

    /// Uniformly random start cell.
    pub fn random_cell<R: Rng>(&self, rng: &mut R) -> Cell {
        Cell { row: rng.gen_range(0..self.rows), col: rng.gen_range(0..self.cols) }
    }

    pub fn manifest(&self) -> GridworldManifest {
        GridworldManifest {
            rows: self.rows,
            cols: self.cols,
            digit_grid: self.digit_grid.clone(),
            image_indices: self.image_indices.clone(),
        }
    }

    /// Rebuilds an MDP from a manifest and the digit pool it was drawn from.
    pub fn from_manifest(manifest: &GridworldManifest, pool: &DigitPool) -> Result<GridworldMdp> {
        let (nr, nc) = (manifest.rows, manifest.cols);
        if manifest.digit_grid.len() != nr
            || manifest.digit_grid.iter().any(|r| r.len() != nc)
            || manifest.image_indices.len() != nr
            || manifest.image_indices.iter().any(|r| r.len() != nc)
        {
            return Err(DdtError::Format("gridworld manifest grid shape mismatch".into()));
        }
        let mut cell_images = Vec::with_capacity(nr);
        for r in 0..nr {
            let mut row = Vec::with_capacity(nc);
            for c in 0..nc {
                let digit = manifest.digit_grid[r][c];
                let idx = manifest.image_indices[r][c];
                let images = pool.images_for(digit);
                let img = images.get(idx).ok_or_else(|| {
                    DdtError::Format(format!(
                        "gridworld manifest: image index {idx} out of range for digit {digit}"
                    ))
                })?;
                row.push(img.clone());
            }
            cell_images.push(row);
        }
        Ok(GridworldMdp {
            rows: nr,
            cols: nc,
            digit_grid: manifest.digit_grid.clone(),
            image_indices: manifest.image_indices.clone(),
            cell_images,
            slip: SLIP_SUCCESS,
        })
    }
}

/// Builds an N x N gridworld; see [`gridworld_make_rect`].
pub fn gridworld_make(
    size: usize,
    digit_set: &[u8],
    pool: &DigitPool,
    rng: &mut ChaCha8Rng,
) -> Result<GridworldMdp> {
    gridworld_make_rect(size, size, digit_set, pool, rng)
}

/// Builds a rows x cols gridworld with digits drawn uniformly from
/// `digit_set` and per-cell images drawn uniformly from each digit's pool.
/// Resamples until at least one cell has a positive digit so trajectory
/// returns can be normalized downstream.
pub fn gridworld_make_rect(
    rows: usize,
    cols: usize,
    digit_set: &[u8],
    pool: &DigitPool,
    rng: &mut ChaCha8Rng,
) -> Result<GridworldMdp> {
    if rows == 0 || cols == 0 || digit_set.is_empty() {
        return Err(DdtError::InvalidConfig("gridworld needs rows, cols > 0 and a nonempty digit set".into()));
    }
    if !digit_set.iter().any(|&d| d > 0) {
        return Err(DdtError::InvalidConfig("digit set must contain a positive digit".into()));
    }
    for &d in digit_set {
        if d > 9 {
            return Err(DdtError::InvalidConfig("digits must be in 0..=9".into()));
        }
        if !pool.has_digit(d) {
            return Err(DdtError::Empty("image pool for a required digit"));
        }
    }
    loop {
        let mut digit_grid = Vec::with_capacity(rows);
        let mut image_indices = Vec::with_capacity(rows);
        let mut cell_images = Vec::with_capacity(rows);
        for _ in 0..rows {
            let mut drow = Vec::with_capacity(cols);
            let mut irow = Vec::with_capacity(cols);
            let mut imrow = Vec::with_capacity(cols);
            for _ in 0..cols {
                let digit = digit_set[rng.gen_range(0..digit_set.len())];
                let images = pool.images_for(digit);
                let idx = rng.gen_range(0..images.len());
                drow.push(digit);
                irow.push(idx);
                imrow.push(images[idx].clone());
            }
            digit_grid.push(drow);
            image_indices.push(irow);
            cell_images.push(imrow);
        }
        if digit_grid.iter().flatten().any(|&d| d > 0) {
            return Ok(GridworldMdp {
                rows,
                cols,
                digit_grid,
                image_indices,
                cell_images,
                slip: SLIP_SUCCESS,
            });
        }
    }
}
