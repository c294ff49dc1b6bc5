//! Run configuration: a TOML file with one table per subsystem, overridden
//! field by field from the command line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corruptions::{CorruptionKind, CorruptionSpec, SEVERITIES};
use crate::dataio::{attach_center_label_sets, attach_factors, load_idx, quadrant_rule, BlobSpec, LabeledDataset};
use crate::error::{Error, Result};

/// A dataset reference.
///
/// * `blobs:seed=1,k=4,d=16,n=400,spread=0.3,split=0[,tags=quadrant][,label_margin=0.05]`
///   (every key optional)
/// * `idx:images=PATH,labels=PATH[,tags=quadrant]`
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Blobs { spec: BlobSpec, tags: bool, label_margin: Option<f64> },
    Idx { images: PathBuf, labels: PathBuf, tags: bool },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Blobs {
            spec: BlobSpec { seed: 0, n_per_class: 400, k: 4, d: 16, spread: 0.3, split: 0 },
            tags: false,
            label_margin: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for data key `{key}`")))
}

fn parse_tags(v: &str) -> Result<bool> {
    match v {
        "quadrant" => Ok(true),
        "none" => Ok(false),
        other => Err(Error::Config(format!("unknown factor rule `{other}`"))),
    }
}

impl FromStr for DataSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let pairs = rest
            .split(',')
            .filter(|p| !p.is_empty())
            .map(|p| p.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value in data spec, got `{p}`"))))
            .collect::<Result<Vec<_>>>()?;
        match kind {
            "blobs" => {
                let DataSpec::Blobs { mut spec, mut tags, mut label_margin } = DataSpec::default() else { unreachable!() };
                for (key, v) in pairs {
                    match key {
                        "seed" => spec.seed = parse_num(key, v)?,
                        "k" => spec.k = parse_num(key, v)?,
                        "d" => spec.d = parse_num(key, v)?,
                        "n" => spec.n_per_class = parse_num(key, v)?,
                        "spread" => spec.spread = parse_num(key, v)?,
                        "split" => spec.split = parse_num(key, v)?,
                        "tags" => tags = parse_tags(v)?,
                        "label_margin" => label_margin = Some(parse_num(key, v)?),
                        other => return Err(Error::Config(format!("unknown blobs key `{other}`"))),
                    }
                }
                Ok(DataSpec::Blobs { spec, tags, label_margin })
            }
            "idx" => {
                let (mut images, mut labels, mut tags) = (None, None, false);
                for (key, v) in pairs {
                    match key {
                        "images" => images = Some(PathBuf::from(v)),
                        "labels" => labels = Some(PathBuf::from(v)),
                        "tags" => tags = parse_tags(v)?,
                        other => return Err(Error::Config(format!("unknown idx key `{other}`"))),
                    }
                }
                match (images, labels) {
                    (Some(images), Some(labels)) => Ok(DataSpec::Idx { images, labels, tags }),
                    _ => Err(Error::Config("idx data needs both images= and labels=".into())),
                }
            }
            other => Err(Error::Config(format!("unknown data source `{other}` (expected blobs or idx)"))),
        }
    }
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSpec::Blobs { spec, tags, label_margin } => {
                write!(
                    f,
                    "blobs:seed={},k={},d={},n={},spread={},split={}",
                    spec.seed, spec.k, spec.d, spec.n_per_class, spec.spread, spec.split
                )?;
                if *tags {
                    write!(f, ",tags=quadrant")?;
                }
                if let Some(m) = label_margin {
                    write!(f, ",label_margin={m}")?;
                }
                Ok(())
            }
            DataSpec::Idx { images, labels, tags } => {
                write!(f, "idx:images={},labels={}", images.display(), labels.display())?;
                if *tags {
                    write!(f, ",tags=quadrant")?;
                }
                Ok(())
            }
        }
    }
}

impl DataSpec {
    /// Fails if a referenced file does not exist.
    pub fn check_paths(&self) -> Result<()> {
        if let DataSpec::Idx { images, labels, .. } = self {
            for p in [images, labels] {
                if !p.exists() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DataSpec::Blobs { spec, tags, label_margin } => {
                let mut ds = spec.generate()?;
                if let Some(margin) = label_margin {
                    ds = attach_center_label_sets(ds, &spec.centers()?, *margin)?;
                }
                if *tags {
                    ds = attach_factors(ds, quadrant_rule)?;
                }
                Ok(ds)
            }
            DataSpec::Idx { images, labels, tags } => {
                let ds = load_idx(images, labels)?;
                if *tags {
                    attach_factors(ds, quadrant_rule)
                } else {
                    Ok(ds)
                }
            }
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            DataSpec::Blobs { spec, .. } => Some(spec.seed),
            DataSpec::Idx { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Training / evaluation data spec.
    pub spec: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_min: Option<f64>,
    pub momentum: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub epsilon: Option<f64>,
    pub steps: Option<usize>,
    pub alpha: Option<f64>,
    pub random_start: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSection {
    pub enabled: Option<bool>,
    pub seed: Option<u64>,
    /// Corruption names; all five when absent.
    pub kinds: Option<Vec<String>>,
    /// Severities; 1..=5 when absent.
    pub severities: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub corruptions: CorruptionSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn corruption_specs(&self, seed: u64) -> Result<Vec<CorruptionSpec>> {
        let kinds = match &self.corruptions.kinds {
            Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<CorruptionKind>>>()?,
            None => CorruptionKind::ALL.to_vec(),
        };
        let severities = self.corruptions.severities.clone().unwrap_or_else(|| SEVERITIES.collect());
        kinds
            .iter()
            .flat_map(|&k| severities.iter().map(move |&s| CorruptionSpec::new(k, s, seed)))
            .collect()
    }
}

/// Flag value if given, else file value; logs when a flag overrides a
/// different file value.
pub fn merge<T: PartialEq + fmt::Debug + Clone>(name: &str, flag: Option<T>, file: Option<&T>) -> Option<T> {
    match (flag, file) {
        (Some(f), Some(c)) => {
            if &f != c {
                log::info!("--{name} {f:?} overrides config value {c:?}");
            }
            Some(f)
        }
        (Some(f), None) => Some(f),
        (None, c) => c.cloned(),
    }
}
