//! IDX binary format (MNIST style).
//!
//! Images: big-endian `0x00000803`, then count, rows, cols as big-endian
//! `u32`, then `count * rows * cols` unsigned bytes. Labels: `0x00000801`,
//! count, then `count` bytes.

use std::path::Path;

use super::{Layout, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::numcore::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let s = bytes.get(at..at + 4).ok_or_else(|| Error::IdxTruncated {
        path: path.to_path_buf(),
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(s.try_into().expect("4 bytes")))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::IdxMagic { path: path.to_path_buf(), expected, found });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::IdxTruncated { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    Ok(())
}

/// `(count, rows, cols, pixel bytes)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    check_len(&bytes, 16 + n * rows * cols, path)?;
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    check_magic(&bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    check_len(&bytes, 8 + n, path)?;
    Ok(bytes[8..].to_vec())
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let per = rows * cols;
    if per == 0 || pixels.len() % per != 0 {
        return Err(invalid(format!("{} bytes is not a whole number of {rows}x{cols} images", pixels.len())));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [pixels.len() / per, rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads an image/label file pair; pixels are scaled by `1/255`. The class
/// count is the largest label plus one (at least 2).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::IdxCountMismatch { images: n, labels: labels.len() });
    }
    if n == 0 {
        return Err(invalid("IDX files contain no examples"));
    }
    let images = Tensor::matrix(n, rows * cols, pixels.iter().map(|&b| f64::from(b) / 255.0).collect())?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let k = labels.iter().copied().max().unwrap_or(0).max(1) + 1;
    LabeledDataset::new(images, Layout::new(rows, cols), labels, k)
}

/// Writes a dataset as an IDX pair, quantising pixels to `round(255 v)`.
pub fn write_dataset_idx(dataset: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    if dataset.num_classes() > 256 {
        return Err(invalid("IDX labels are single bytes"));
    }
    let pixels: Vec<u8> = dataset.images().data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let layout = dataset.layout();
    write_idx_images(images_path, layout.height, layout.width, &pixels)?;
    let labels: Vec<u8> = dataset.labels().iter().map(|&y| y as u8).collect();
    write_idx_labels(labels_path, &labels)
}
