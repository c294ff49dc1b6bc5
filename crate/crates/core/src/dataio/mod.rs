//! Labeled datasets: IDX ingestion, seeded synthetic blobs, factor tags
//! and multi-label annotation sets.

mod idx;
mod synth;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_dataset_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synth::{attach_center_label_sets, blob_centers, synth_blobs, synth_blobs_split, BlobSpec};

use crate::error::{invalid, Result};
use crate::numcore::Tensor;

/// Height x width arrangement of the flat pixel vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
}

impl Layout {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    /// Square layout when `d` is a perfect square, otherwise a single row.
    pub fn for_dim(d: usize) -> Self {
        let s = (d as f64).sqrt().round() as usize;
        if s * s == d {
            Self::new(s, s)
        } else {
            Self::new(1, d)
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    layout: Layout,
    labels: Vec<usize>,
    k: usize,
    factor_tags: Option<Vec<String>>,
    label_sets: Option<Vec<BTreeSet<usize>>>,
}

impl LabeledDataset {
    pub fn new(images: Tensor, layout: Layout, labels: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(invalid(format!("need at least 2 classes, got {k}")));
        }
        if images.shape().len() != 2 || images.cols() != layout.pixels() {
            return Err(invalid(format!(
                "images {:?} do not match layout {}x{}",
                images.shape(),
                layout.height,
                layout.width
            )));
        }
        if images.rows() != labels.len() {
            return Err(invalid(format!("{} images but {} labels", images.rows(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= k) {
            return Err(invalid(format!("label {bad} out of range for K = {k}")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("pixels must lie in [0, 1]"));
        }
        Ok(Self { images, layout, labels, k, factor_tags: None, label_sets: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.pixels()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn factor_tags(&self) -> Option<&[String]> {
        self.factor_tags.as_deref()
    }

    pub fn label_sets(&self) -> Option<&[BTreeSet<usize>]> {
        self.label_sets.as_deref()
    }

    /// Same labels and annotations, new pixels.
    pub fn with_images(&self, images: Tensor) -> Result<Self> {
        let mut out = Self::new(images, self.layout, self.labels.clone(), self.k)?;
        out.factor_tags = self.factor_tags.clone();
        out.label_sets = self.label_sets.clone();
        Ok(out)
    }

    pub fn with_factor_tags(mut self, tags: Vec<String>) -> Result<Self> {
        if tags.len() != self.len() {
            return Err(invalid(format!("{} tags for {} examples", tags.len(), self.len())));
        }
        self.factor_tags = Some(tags);
        Ok(self)
    }

    pub fn with_label_sets(mut self, sets: Vec<BTreeSet<usize>>) -> Result<Self> {
        if sets.len() != self.len() {
            return Err(invalid(format!("{} label sets for {} examples", sets.len(), self.len())));
        }
        for (i, s) in sets.iter().enumerate() {
            if s.is_empty() {
                return Err(invalid(format!("empty label set at example {i}")));
            }
            if let Some(bad) = s.iter().find(|&&c| c >= self.k) {
                return Err(invalid(format!("label set of example {i} contains {bad} >= K = {}", self.k)));
            }
        }
        self.label_sets = Some(sets);
        Ok(self)
    }

    /// Rows `indices` as an `(images, labels)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.images.select_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    /// Concatenates datasets that share layout and class count.
    pub fn concat(parts: &[LabeledDataset]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
        let mut images = first.images.clone();
        let mut labels = first.labels.clone();
        let mut tags = first.factor_tags.clone();
        let mut sets = first.label_sets.clone();
        for p in &parts[1..] {
            if p.layout != first.layout || p.k != first.k {
                return Err(invalid("datasets differ in layout or class count"));
            }
            images = images.concat_rows(&p.images)?;
            labels.extend_from_slice(&p.labels);
            tags = match (tags, &p.factor_tags) {
                (Some(mut a), Some(b)) => {
                    a.extend(b.iter().cloned());
                    Some(a)
                }
                _ => None,
            };
            sets = match (sets, &p.label_sets) {
                (Some(mut a), Some(b)) => {
                    a.extend(b.iter().cloned());
                    Some(a)
                }
                _ => None,
            };
        }
        let mut out = Self::new(images, first.layout, labels, first.k)?;
        out.factor_tags = tags;
        out.label_sets = sets;
        Ok(out)
    }
}

/// Tags every example with `rule(index, pixels, label)`; fails if the rule
/// has no tag for some example.
pub fn attach_factors<F>(dataset: LabeledDataset, rule: F) -> Result<LabeledDataset>
where
    F: Fn(usize, &[f64], usize) -> Option<String>,
{
    let tags = (0..dataset.len())
        .map(|i| {
            rule(i, dataset.images.row(i), dataset.labels[i])
                .ok_or_else(|| invalid(format!("factor rule undefined for example {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    dataset.with_factor_tags(tags)
}

/// Tags by which side of 0.5 the first two pixels fall: `q00` .. `q11`.
pub fn quadrant_rule(_: usize, pixels: &[f64], _: usize) -> Option<String> {
    let a = pixels.first()?;
    let b = pixels.get(1)?;
    Some(format!("q{}{}", u8::from(*a >= 0.5), u8::from(*b >= 0.5)))
}

/// Provenance sidecar written next to exported datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub seed: Option<u64>,
    pub k: usize,
    pub n: usize,
    pub layout: Layout,
    pub factor_tags: Option<String>,
    pub label_sets: Option<String>,
    #[serde(default)]
    pub extra: std::collections::BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
