use std::collections::BTreeSet;

use super::{Layout, LabeledDataset};
use crate::error::{invalid, Result};
use crate::numcore::Tensor;
use crate::rng;

/// Offset of every center coordinate from mid-gray.
const CENTER_OFFSET: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub seed: u64,
    pub n_per_class: usize,
    pub k: usize,
    pub d: usize,
    pub spread: f64,
    pub split: u64,
}

/// Class centers at `0.5 ± 0.25` per coordinate, signs drawn from
/// substream 0 of `seed`; duplicate sign patterns are redrawn, so distinct
/// centers are at least 0.5 apart.
pub fn blob_centers(seed: u64, k: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    if k < 2 || d < 2 {
        return Err(invalid(format!("blobs need K >= 2 and d >= 2, got K = {k}, d = {d}")));
    }
    if d < 64 && k > (1usize << d) {
        return Err(invalid(format!("{k} distinct centers do not fit in {d} dimensions")));
    }
    let mut r = rng::substream(seed, 0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centers.len() < k {
        let c: Vec<f64> = (0..d)
            .map(|_| if rng::unit(&mut r) < 0.5 { 0.5 - CENTER_OFFSET } else { 0.5 + CENTER_OFFSET })
            .collect();
        if !centers.contains(&c) {
            centers.push(c);
        }
    }
    Ok(centers)
}

/// `K` isotropic Gaussian blobs of standard deviation `spread`, clipped to
/// `[0, 1]^d`. Class `c`, example `i` draws from substream `1 + c * n + i`.
/// Examples are stored class-major.
pub fn synth_blobs(seed: u64, n_per_class: usize, k: usize, d: usize, spread: f64) -> Result<LabeledDataset> {
    synth_blobs_split(seed, n_per_class, k, d, spread, 0)
}

/// Independent sample of the same blobs: split `s` shifts every sample
/// substream by `s * 2^40`, leaving the centers unchanged. Split 0 is
/// [`synth_blobs`].
pub fn synth_blobs_split(seed: u64, n_per_class: usize, k: usize, d: usize, spread: f64, split: u64) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(invalid("n_per_class must be positive"));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(invalid(format!("spread must be finite and >= 0, got {spread}")));
    }
    let centers = blob_centers(seed, k, d)?;
    let mut data = Vec::with_capacity(k * n_per_class * d);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for (c, center) in centers.iter().enumerate() {
        for i in 0..n_per_class {
            let mut r = rng::substream(seed, (split << 40) + 1 + (c * n_per_class + i) as u64);
            data.extend(center.iter().map(|&m| (m + spread * rng::standard_normal(&mut r)).clamp(0.0, 1.0)));
            labels.push(c);
        }
    }
    let images = Tensor::matrix(k * n_per_class, d, data)?;
    LabeledDataset::new(images, Layout::for_dim(d), labels, k)
}

impl BlobSpec {
    pub fn generate(&self) -> Result<LabeledDataset> {
        synth_blobs_split(self.seed, self.n_per_class, self.k, self.d, self.spread, self.split)
    }

    pub fn centers(&self) -> Result<Vec<Vec<f64>>> {
        blob_centers(self.seed, self.k, self.d)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Acceptable-label sets: the true class plus every class whose center is
/// within `margin` of the true center's distance to the example.
pub fn attach_center_label_sets(dataset: LabeledDataset, centers: &[Vec<f64>], margin: f64) -> Result<LabeledDataset> {
    if centers.len() != dataset.num_classes() {
        return Err(invalid(format!("{} centers for K = {}", centers.len(), dataset.num_classes())));
    }
    let sets = (0..dataset.len())
        .map(|i| {
            let x = dataset.images().row(i);
            let y = dataset.labels()[i];
            let own = dist(x, &centers[y]);
            let mut s: BTreeSet<usize> = centers
                .iter()
                .enumerate()
                .filter(|(_, c)| dist(x, c) <= own + margin)
                .map(|(j, _)| j)
                .collect();
            s.insert(y);
            s
        })
        .collect();
    dataset.with_label_sets(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_clipped() {
        let a = synth_blobs(3, 20, 4, 16, 0.3).unwrap();
        let b = synth_blobs(3, 20, 4, 16, 0.3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_blobs(4, 20, 4, 16, 0.3).unwrap());
        assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.len(), 80);
    }

    #[test]
    fn splits_share_centers_but_not_samples() {
        let a = synth_blobs_split(3, 10, 2, 4, 0.0, 0).unwrap();
        let b = synth_blobs_split(3, 10, 2, 4, 0.0, 1).unwrap();
        assert_eq!(a, b);
        let a = synth_blobs_split(3, 10, 2, 4, 0.2, 0).unwrap();
        let b = synth_blobs_split(3, 10, 2, 4, 0.2, 1).unwrap();
        assert_ne!(a.images(), b.images());
    }

    #[test]
    fn zero_spread_collapses_to_centers() {
        let d = synth_blobs(5, 3, 3, 4, 0.0).unwrap();
        let centers = blob_centers(5, 3, 4).unwrap();
        for i in 0..d.len() {
            assert_eq!(d.images().row(i), centers[d.labels()[i]].as_slice());
        }
    }

    #[test]
    fn centers_are_separated() {
        let c = blob_centers(9, 4, 2).unwrap();
        for i in 0..4 {
            for j in 0..i {
                assert!(dist(&c[i], &c[j]) >= 0.4);
            }
        }
        assert!(blob_centers(9, 5, 2).is_err());
        assert!(synth_blobs(1, 10, 1, 4, 0.1).is_err());
        assert!(synth_blobs(1, 10, 2, 1, 0.1).is_err());
    }

    #[test]
    fn label_sets_contain_true_class() {
        let spec = BlobSpec { seed: 2, n_per_class: 30, k: 3, d: 4, spread: 0.3, split: 0 };
        let d = attach_center_label_sets(spec.generate().unwrap(), &spec.centers().unwrap(), 0.1).unwrap();
        let sets = d.label_sets().unwrap();
        assert!(sets.iter().zip(d.labels()).all(|(s, y)| s.contains(y)));
        assert!(sets.iter().any(|s| s.len() > 1));
    }
}
