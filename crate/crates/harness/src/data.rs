//! Dataset generation and IDX ingestion.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use glap_core::io::write_atomic;
use glap_core::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_CLASSES: usize = 10;

/// `x ~ U[-pi, pi]`, `y = sin(x) + N(0, noise_sd^2)`.
pub fn generate_sine(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("sine task needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::config(e.to_string()))?;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
    let y = x.iter().map(|&v| v.sin() + noise.sample(&mut rng)).collect();
    Ok(Dataset::regression(1, 1, x, y)?)
}

/// Noiseless `sin` on `n` evenly spaced points of `[lo, hi]`.
pub fn sine_grid(n: usize, lo: f64, hi: f64) -> Result<Dataset> {
    let x: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let y = x.iter().map(|v| v.sin()).collect();
    Ok(Dataset::regression(1, 1, x, y)?)
}

/// Two isotropic Gaussian blobs with exactly `n / 2` points each; labels alternate.
pub fn generate_mixture(n: usize, means: [[f64; 2]; 2], sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::config(format!(
            "mixture size must be even and positive, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).map_err(|e| Error::config(e.to_string()))?;
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        x.push(means[c][0] + noise.sample(&mut rng));
        x.push(means[c][1] + noise.sample(&mut rng));
        labels.push(c);
    }
    Ok(Dataset::classification(2, 2, 2, x, labels)?)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::config(format!("{}: truncated IDX header", path.display())))
}

/// Parsed IDX image file: `count` images of `rows x cols` bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::config(format!(
            "{}: bad image magic {magic:#010x}",
            path.display()
        )));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::config(format!("{}: image dimensions overflow", path.display())))?;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(Error::config(format!(
            "{}: expected {need} pixel bytes, found {}",
            path.display(),
            body.len()
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::config(format!(
            "{}: bad label magic {magic:#010x}",
            path.display()
        )));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::config(format!(
            "{}: expected {count} labels, found {}",
            path.display(),
            body.len()
        )));
    }
    Ok(body.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads the first `limit` images (pixels scaled to `[0, 1]`) and labels.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<Dataset> {
    if limit == 0 {
        return Err(Error::config("IDX limit must be positive"));
    }
    let images = parse_idx_images(&read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read(labels_path)?, labels_path)?;
    if images.count() != labels.len() {
        return Err(Error::config(format!(
            "{} has {} images but {} has {} labels",
            images_path.display(),
            images.count(),
            labels_path.display(),
            labels.len()
        )));
    }
    let n = limit.min(labels.len());
    let pixels = images.rows * images.cols;
    let x = images.pixels[..n * pixels].iter().map(|&p| p as f64 / 255.0).collect();
    let y: Vec<usize> = labels[..n].iter().map(|&l| l as usize).collect();
    if let Some(bad) = y.iter().find(|&&l| l >= IDX_CLASSES) {
        return Err(Error::config(format!(
            "{}: label {bad} out of range",
            labels_path.display()
        )));
    }
    Ok(Dataset::classification(pixels, IDX_CLASSES, IDX_CLASSES, x, y)?)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols).max(1);
    let mut buf = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    buf.extend_from_slice(pixels);
    buf
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    buf
}

pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    write_atomic(images_path, &encode_idx_images(rows, cols, pixels))?;
    write_atomic(labels_path, &encode_idx_labels(labels))?;
    Ok(())
}

/// Rotates square images counterclockwise by `degrees` about their center
/// using bilinear interpolation; samples outside the image read as 0.
pub fn rotate_inputs(data: &Dataset, degrees: f64) -> Result<Dataset> {
    let len = data.input_dim();
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len {
        return Err(Error::config(format!("input length {len} is not a square image")));
    }
    if degrees == 0.0 {
        return Ok(data.clone());
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let c = (side as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(data.inputs().len());
    for n in 0..data.len() {
        let img = data.input(n);
        let at = |r: isize, col: isize| -> f64 {
            if r < 0 || col < 0 || r >= side as isize || col >= side as isize {
                0.0
            } else {
                img[r as usize * side + col as usize]
            }
        };
        for i in 0..side {
            for j in 0..side {
                // inverse map: rotate the output coordinate clockwise to find its source
                let dx = j as f64 - c;
                let dy = c - i as f64;
                let sx = cos * dx + sin * dy;
                let sy = -sin * dx + cos * dy;
                let col = sx + c;
                let row = c - sy;
                let (r0, c0) = (row.floor(), col.floor());
                let (fr, fc) = (row - r0, col - c0);
                let (r0, c0) = (r0 as isize, c0 as isize);
                let v = (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
                    + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
                out.push(v);
            }
        }
    }
    Ok(data.with_inputs(out)?)
}
