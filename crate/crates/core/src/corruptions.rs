//! Synthetic common-corruption suite: five corruption families at five
//! severities each.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{Layout, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::numcore::Tensor;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    SaltPepper,
    BoxBlur,
    Contrast,
    Brightness,
}

pub const SEVERITIES: std::ops::RangeInclusive<u8> = 1..=5;

const NOISE_SIGMA: [f64; 5] = [0.04, 0.08, 0.12, 0.16, 0.20];
const FLIP_PROB: [f64; 5] = [0.02, 0.04, 0.07, 0.10, 0.15];
const BLUR_RADIUS: [usize; 5] = [1, 1, 2, 2, 3];
const BLUR_PASSES: [usize; 5] = [1, 2, 1, 2, 2];
const CONTRAST_GAMMA: [f64; 5] = [0.75, 0.6, 0.45, 0.3, 0.2];
const BRIGHTNESS_SHIFT: [f64; 5] = [0.08, 0.14, 0.20, 0.26, 0.32];

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::SaltPepper,
        CorruptionKind::BoxBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::SaltPepper => "salt_pepper",
            CorruptionKind::BoxBlur => "box_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
        }
    }

    /// Strength of the corruption at `severity`, increasing in severity.
    /// Blur reports the variance of the composed box filter,
    /// `passes * r (r + 1) / 3`; contrast reports `1 - γ`.
    pub fn strength(self, severity: u8) -> Result<f64> {
        let s = severity_index(severity)?;
        Ok(match self {
            CorruptionKind::GaussianNoise => NOISE_SIGMA[s],
            CorruptionKind::SaltPepper => FLIP_PROB[s],
            CorruptionKind::BoxBlur => {
                let r = BLUR_RADIUS[s] as f64;
                BLUR_PASSES[s] as f64 * r * (r + 1.0) / 3.0
            }
            CorruptionKind::Contrast => 1.0 - CONTRAST_GAMMA[s],
            CorruptionKind::Brightness => BRIGHTNESS_SHIFT[s],
        })
    }
}

impl std::fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown corruption `{s}`")))
    }
}

fn severity_index(severity: u8) -> Result<usize> {
    if !SEVERITIES.contains(&severity) {
        return Err(invalid(format!("severity must be in 1..=5, got {severity}")));
    }
    Ok(usize::from(severity - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    /// Seeds the stochastic corruptions (noise, salt-and-pepper).
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        severity_index(severity)?;
        Ok(Self { kind, severity, seed })
    }
}

/// All five corruptions at all five severities.
pub fn default_specs(seed: u64) -> Vec<CorruptionSpec> {
    CorruptionKind::ALL
        .into_iter()
        .flat_map(|kind| SEVERITIES.map(move |severity| CorruptionSpec { kind, severity, seed }))
        .collect()
}

/// Corrupts one image laid out as `layout`; the result is clipped to `[0, 1]`.
pub fn corrupt(image: &[f64], layout: Layout, spec: &CorruptionSpec) -> Result<Vec<f64>> {
    if image.len() != layout.pixels() {
        return Err(invalid(format!("image of {} pixels for a {}x{} layout", image.len(), layout.height, layout.width)));
    }
    let s = severity_index(spec.severity)?;
    let mut r = rng::substream(spec.seed, 0);
    let out: Vec<f64> = match spec.kind {
        CorruptionKind::GaussianNoise => image
            .iter()
            .map(|&v| v + NOISE_SIGMA[s] * rng::standard_normal(&mut r))
            .collect(),
        CorruptionKind::SaltPepper => image
            .iter()
            .map(|&v| {
                if rng::unit(&mut r) < FLIP_PROB[s] {
                    if rng::unit(&mut r) < 0.5 {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    v
                }
            })
            .collect(),
        CorruptionKind::BoxBlur => {
            let mut img = image.to_vec();
            for _ in 0..BLUR_PASSES[s] {
                img = box_blur(&img, layout, BLUR_RADIUS[s]);
            }
            img
        }
        CorruptionKind::Contrast => image.iter().map(|&v| 0.5 + CONTRAST_GAMMA[s] * (v - 0.5)).collect(),
        CorruptionKind::Brightness => image.iter().map(|&v| v + BRIGHTNESS_SHIFT[s]).collect(),
    };
    Ok(out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Mean over the in-bounds part of the `(2r + 1)^2` window.
fn box_blur(img: &[f64], layout: Layout, radius: usize) -> Vec<f64> {
    let (h, w) = (layout.height, layout.width);
    let mut out = vec![0.0; img.len()];
    for i in 0..h {
        for j in 0..w {
            let (i0, i1) = (i.saturating_sub(radius), (i + radius).min(h - 1));
            let (j0, j1) = (j.saturating_sub(radius), (j + radius).min(w - 1));
            let mut sum = 0.0;
            for a in i0..=i1 {
                for b in j0..=j1 {
                    sum += img[a * w + b];
                }
            }
            out[i * w + j] = sum / ((i1 - i0 + 1) * (j1 - j0 + 1)) as f64;
        }
    }
    out
}

/// Corrupted copies of a test set keyed by `(corruption, severity)`.
#[derive(Debug, Clone, Default)]
pub struct CorruptionSuite {
    pub seed: u64,
    pub sets: BTreeMap<(CorruptionKind, u8), LabeledDataset>,
}

impl CorruptionSuite {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn kinds(&self) -> Vec<CorruptionKind> {
        let mut k: Vec<_> = self.sets.keys().map(|(k, _)| *k).collect();
        k.dedup();
        k
    }

    pub fn get(&self, kind: CorruptionKind, severity: u8) -> Option<&LabeledDataset> {
        self.sets.get(&(kind, severity))
    }
}

/// Applies every spec to every image. Image `i` under `(kind, severity)`
/// uses seed `derive_seed([seed, kind, severity, i])`; `spec.seed` is
/// ignored in favour of the suite seed.
pub fn build_corruption_suite(testset: &LabeledDataset, specs: &[CorruptionSpec], seed: u64) -> Result<CorruptionSuite> {
    if testset.is_empty() {
        return Err(invalid("empty test set"));
    }
    let mut sets = BTreeMap::new();
    let layout = testset.layout();
    for spec in specs {
        let mut data = Vec::with_capacity(testset.images().len());
        for i in 0..testset.len() {
            let per_image = CorruptionSpec {
                seed: rng::derive_seed(&[seed, spec.kind as u64, u64::from(spec.severity), i as u64]),
                ..*spec
            };
            data.extend(corrupt(testset.images().row(i), layout, &per_image)?);
        }
        let images = Tensor::matrix(testset.len(), layout.pixels(), data)?;
        sets.insert((spec.kind, spec.severity), testset.with_images(images)?);
    }
    Ok(CorruptionSuite { seed, sets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_blobs;

    fn spec(kind: CorruptionKind, severity: u8) -> CorruptionSpec {
        CorruptionSpec::new(kind, severity, 3).unwrap()
    }

    #[test]
    fn strength_is_strictly_monotone() {
        for kind in CorruptionKind::ALL {
            let v: Vec<f64> = SEVERITIES.map(|s| kind.strength(s).unwrap()).collect();
            assert!(v.windows(2).all(|w| w[0] < w[1]), "{kind}: {v:?}");
        }
    }

    #[test]
    fn contrast_fixes_mid_gray_and_brightness_shifts() {
        let layout = Layout::new(2, 2);
        for s in SEVERITIES {
            assert_eq!(corrupt(&[0.5; 4], layout, &spec(CorruptionKind::Contrast, s)).unwrap(), vec![0.5; 4]);
        }
        let b = corrupt(&[0.5, 0.95, 0.0, 0.2], layout, &spec(CorruptionKind::Brightness, 1)).unwrap();
        assert!((b[0] - 0.58).abs() < 1e-15);
        assert_eq!(b[1], 1.0);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let n = 10_000;
        let layout = Layout::new(100, 100);
        let img = vec![0.5; n];
        let out = corrupt(&img, layout, &spec(CorruptionKind::GaussianNoise, 3)).unwrap();
        let mean = out.iter().sum::<f64>() / n as f64;
        let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd - 0.12).abs() <= 0.05 * 0.12, "sd {sd}");
    }

    #[test]
    fn blur_preserves_constant_and_smooths_spike() {
        let layout = Layout::new(3, 3);
        let flat = corrupt(&[0.3; 9], layout, &spec(CorruptionKind::BoxBlur, 5)).unwrap();
        assert!(flat.iter().all(|v| (v - 0.3).abs() < 1e-15));
        let mut spike = vec![0.0; 9];
        spike[4] = 1.0;
        let b = corrupt(&spike, layout, &spec(CorruptionKind::BoxBlur, 1)).unwrap();
        assert!((b[4] - 1.0 / 9.0).abs() < 1e-15);
        assert!((b[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!("fog".parse::<CorruptionKind>().is_err());
        assert_eq!("box_blur".parse::<CorruptionKind>().unwrap(), CorruptionKind::BoxBlur);
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 0, 1).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 6, 1).is_err());
        let bad = CorruptionSpec { kind: CorruptionKind::Contrast, severity: 9, seed: 0 };
        assert!(corrupt(&[0.5], Layout::new(1, 1), &bad).is_err());
    }

    #[test]
    fn suite_shape_and_determinism() {
        let d = synth_blobs(1, 5, 2, 4, 0.2).unwrap();
        assert!(build_corruption_suite(&d, &[], 0).unwrap().is_empty());
        let a = build_corruption_suite(&d, &default_specs(0), 11).unwrap();
        let b = build_corruption_suite(&d, &default_specs(0), 11).unwrap();
        assert_eq!(a.len(), 25);
        for (key, set) in &a.sets {
            assert_eq!(set.len(), d.len());
            assert_eq!(set.labels(), d.labels());
            assert_eq!(set.images(), b.sets[key].images());
            assert!(set.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(a.kinds().len(), 5);
    }
}
