//! MNIST IDX ingestion and a deterministic synthetic-glyph fallback.

use crate::error::{DdtError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolSource {
    MnistIdx,
    Synthetic,
}

/// Per-digit collections of 28x28 grayscale images with values in [0, 1].
#[derive(Debug, Clone)]
pub struct DigitPool {
    images: Vec<Vec<Vec<f64>>>,
    pub source: PoolSource,
}

impl DigitPool {
    pub fn images_for(&self, digit: u8) -> &[Vec<f64>] {
        &self.images[digit as usize]
    }

    pub fn total_images(&self) -> usize {
        self.images.iter().map(|v| v.len()).sum()
    }

    pub fn has_digit(&self, digit: u8) -> bool {
        !self.images[digit as usize].is_empty()
    }

    /// Copy of the pool keeping at most `per_digit` images per digit, in
    /// original order. Useful to bound memory when working from the full
    /// MNIST training set.
    pub fn truncated(&self, per_digit: usize) -> DigitPool {
        DigitPool {
            images: self
                .images
                .iter()
                .map(|v| v.iter().take(per_digit).cloned().collect())
                .collect(),
            source: self.source,
        }
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| DdtError::Format(format!("{what}: truncated at offset {offset}")))?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

/// Parses the canonical MNIST IDX pair and groups images by label.
/// Validation is strict: magic numbers, matching counts, 28x28 dimensions,
/// and exact file lengths (no trailing bytes).
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<DigitPool> {
    let images = std::fs::read(images_path)
        .map_err(|e| DdtError::io(format!("reading {}", images_path.display()), e))?;
    let labels = std::fs::read(labels_path)
        .map_err(|e| DdtError::io(format!("reading {}", labels_path.display()), e))?;
    parse_idx_pair(&images, &labels)
}

/// Parses in-memory IDX image and label payloads.
pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<DigitPool> {
    let magic = read_u32_be(images, 0, "images file")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DdtError::Format(format!(
            "images file: wrong magic {magic:#010x} at offset 0, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n_images = read_u32_be(images, 4, "images file")? as usize;
    let rows = read_u32_be(images, 8, "images file")? as usize;
    let cols = read_u32_be(images, 12, "images file")? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(DdtError::Format(format!(
            "images file: dimensions {rows}x{cols} at offset 8, expected 28x28"
        )));
    }
    let expected_len = 16 + n_images * rows * cols;
    if images.len() < expected_len {
        return Err(DdtError::Format(format!(
            "images file: truncated at offset {} (expected {expected_len} bytes)",
            images.len()
        )));
    }
    if images.len() > expected_len {
        return Err(DdtError::Format(format!(
            "images file: {} trailing bytes after offset {expected_len}",
            images.len() - expected_len
        )));
    }

    let magic = read_u32_be(labels, 0, "labels file")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DdtError::Format(format!(
            "labels file: wrong magic {magic:#010x} at offset 0, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n_labels = read_u32_be(labels, 4, "labels file")? as usize;
    if n_labels != n_images {
        return Err(DdtError::Format(format!(
            "count mismatch: {n_images} images vs {n_labels} labels"
        )));
    }
    let expected_len = 8 + n_labels;
    if labels.len() < expected_len {
        return Err(DdtError::Format(format!(
            "labels file: truncated at offset {} (expected {expected_len} bytes)",
            labels.len()
        )));
    }
    if labels.len() > expected_len {
        return Err(DdtError::Format(format!(
            "labels file: {} trailing bytes after offset {expected_len}",
            labels.len() - expected_len
        )));
    }

    let mut pools: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 10];
    for i in 0..n_images {
        let label = labels[8 + i];
        if label > 9 {
            return Err(DdtError::Format(format!(
                "labels file: invalid label {label} at offset {}",
                8 + i
            )));
        }
        let start = 16 + i * IMAGE_LEN;
        let image: Vec<f64> = images[start..start + IMAGE_LEN]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        pools[label as usize].push(image);
    }
    Ok(DigitPool { images: pools, source: PoolSource::MnistIdx })
}

// Seven-segment layouts: A top, B top-right, C bottom-right, D bottom,
// E bottom-left, F top-left, G middle.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],    // 0
    [false, true, true, false, false, false, false], // 1
    [true, true, false, true, true, false, true],   // 2
    [true, true, true, true, false, false, true],   // 3
    [false, true, true, false, false, true, true],  // 4
    [true, false, true, true, false, true, true],   // 5
    [true, false, true, true, true, true, true],    // 6
    [true, true, true, false, false, false, false], // 7
    [true, true, true, true, true, true, true],     // 8
    [true, true, true, true, false, true, true],    // 9
];

fn draw_rect(img: &mut [f64], top: i32, left: i32, bottom: i32, right: i32) {
    for r in top.max(0)..=bottom.min(IMAGE_SIDE as i32 - 1) {
        for c in left.max(0)..=right.min(IMAGE_SIDE as i32 - 1) {
            img[r as usize * IMAGE_SIDE + c as usize] = 1.0;
        }
    }
}

fn render_glyph(digit: u8, dr: i32, dc: i32) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_LEN];
    // glyph box rows 4..24, cols 8..20, stroke thickness 2
    let (top, bottom, left, right, mid) = (4, 23, 8, 19, 13);
    let segs = SEGMENTS[digit as usize];
    if segs[0] {
        draw_rect(&mut img, top + dr, left + dc, top + 1 + dr, right + dc);
    }
    if segs[1] {
        draw_rect(&mut img, top + dr, right - 1 + dc, mid + dr, right + dc);
    }
    if segs[2] {
        draw_rect(&mut img, mid + dr, right - 1 + dc, bottom + dr, right + dc);
    }
    if segs[3] {
        draw_rect(&mut img, bottom - 1 + dr, left + dc, bottom + dr, right + dc);
    }
    if segs[4] {
        draw_rect(&mut img, mid + dr, left + dc, bottom + dr, left + 1 + dc);
    }
    if segs[5] {
        draw_rect(&mut img, top + dr, left + dc, mid + dr, left + 1 + dc);
    }
    if segs[6] {
        draw_rect(&mut img, mid + dr, left + dc, mid + 1 + dr, right + dc);
    }
    img
}

/// Renders deterministic seven-segment style digit glyphs with +-1 px jitter
/// and small intensity noise. Distinct digits are linearly separable by
/// construction.
pub fn synthetic_glyphs(digit_set: &[u8], variants: usize, rng: &mut ChaCha8Rng) -> DigitPool {
    let mut pools: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 10];
    for &digit in digit_set {
        assert!(digit <= 9, "digit out of range");
        for _ in 0..variants {
            let dr = rng.gen_range(-1..=1);
            let dc = rng.gen_range(-1..=1);
            let mut img = render_glyph(digit, dr, dc);
            for v in img.iter_mut() {
                let noise: f64 = rng.gen_range(-1.0..1.0) * 0.05;
                *v = (*v + noise).clamp(0.0, 1.0);
            }
            pools[digit as usize].push(img);
        }
    }
    DigitPool { images: pools, source: PoolSource::Synthetic }
}

/// Looks for the canonical MNIST training files under `dir`.
pub fn find_mnist(dir: &Path) -> Option<(std::path::PathBuf, std::path::PathBuf)> {
    let images = dir.join("train-images-idx3-ubyte");
    let labels = dir.join("train-labels-idx1-ubyte");
    if images.is_file() && labels.is_file() {
        Some((images, labels))
    } else {
        None
    }
}
