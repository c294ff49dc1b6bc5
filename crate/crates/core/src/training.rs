//! Std, Adv and Adv⁺ training with SGD + momentum and an epoch-level
//! cosine learning-rate schedule.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::{pgd, AttackConfig};
use crate::dataio::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::labelaug::{augmented_targets, LabelAugConfig, IDENTITY, PGD};
use crate::model::{init_params, one_hot, predict_class, Arch, ClassSpace, ModelParams, Objective};
use crate::numcore::Tensor;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Std,
    Adv,
    AdvPlus,
}

impl TrainMode {
    /// Operation labels carried by models trained in this mode.
    pub fn operations(self) -> Vec<String> {
        match self {
            TrainMode::AdvPlus => vec![IDENTITY.to_string(), PGD.to_string()],
            _ => vec![],
        }
    }

    pub fn class_space(self, k: usize) -> Result<ClassSpace> {
        ClassSpace::new(k, self.operations().len())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Std => "std",
            TrainMode::Adv => "adv",
            TrainMode::AdvPlus => "adv_plus",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std" => Ok(TrainMode::Std),
            "adv" => Ok(TrainMode::Adv),
            "adv_plus" | "adv+" => Ok(TrainMode::AdvPlus),
            other => Err(invalid(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Floor of the cosine schedule; `lr0 * 1e-4` by default.
    pub lr_min: f64,
    pub momentum: f64,
    pub attack: AttackConfig,
    /// Label-augmentation scaling factor (Adv⁺ only).
    pub delta: f64,
    /// Seeds weight initialisation, shuffling and per-batch attack seeds.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Std,
            epochs: 10,
            batch_size: 64,
            lr0: 0.01,
            lr_min: 0.01 * 1e-4,
            momentum: 0.9,
            attack: AttackConfig::training(),
            delta: 0.03,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr0 > self.lr_min && self.lr_min >= 0.0) {
            return Err(invalid(format!("need lr0 > lr_min >= 0, got {} and {}", self.lr0, self.lr_min)));
        }
        if self.mode != TrainMode::Std {
            self.attack.validate()?;
        }
        if self.mode == TrainMode::AdvPlus && !(0.0..1.0).contains(&self.delta) {
            return Err(invalid(format!("delta must lie in [0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub clean_acc: f64,
    /// `None` for standard training.
    pub adv_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub wall_time_secs: f64,
}

impl TrainHistory {
    /// Columns `epoch,lr,train_loss,clean_acc,adv_acc`; `adv_acc` is empty
    /// for standard training.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,lr,train_loss,clean_acc,adv_acc")?;
        for r in &self.records {
            let adv = r.adv_acc.map(|a| format!("{a}")).unwrap_or_default();
            writeln!(f, "{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.clean_acc, adv)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// `lr_min + (lr0 - lr_min)(1 + cos(π t / T)) / 2`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if t >= total {
        return Err(invalid(format!("epoch {t} outside schedule of {total}")));
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

/// `v' = μ v + g`, `p' = p - lr v'`.
pub fn sgd_momentum_step(params: &Tensor, grads: &Tensor, velocity: &Tensor, lr: f64, momentum: f64) -> Result<(Tensor, Tensor)> {
    if params.shape() != grads.shape() || params.shape() != velocity.shape() {
        return Err(Error::Shape {
            node: "sgd".into(),
            detail: format!(
                "params {:?}, grads {:?}, velocity {:?}",
                params.shape(),
                grads.shape(),
                velocity.shape()
            ),
        });
    }
    let v: Vec<f64> = velocity.data().iter().zip(grads.data()).map(|(v, g)| momentum * v + g).collect();
    let p: Vec<f64> = params.data().iter().zip(&v).map(|(p, v)| p - lr * v).collect();
    Ok((Tensor::new(params.shape().to_vec(), p)?, Tensor::new(params.shape().to_vec(), v)?))
}

/// A batch as seen by the optimizer, for instrumentation.
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub clean: &'a Tensor,
    pub adversarial: Option<&'a Tensor>,
    pub epsilon: f64,
}

pub fn train(dataset: &LabeledDataset, arch: &Arch, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with_observer(dataset, arch, config, &mut |_| {})
}

fn accuracy(logits: &Tensor, rows: std::ops::Range<usize>, labels: &[usize], cs: ClassSpace) -> Result<usize> {
    let mut correct = 0;
    for (r, &y) in rows.zip(labels) {
        if predict_class(logits.row(r), cs)? == y {
            correct += 1;
        }
    }
    Ok(correct)
}

pub fn train_with_observer(
    dataset: &LabeledDataset,
    arch: &Arch,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&BatchEvent<'_>),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(invalid("empty training set"));
    }
    let k = dataset.num_classes();
    let class_space = config.mode.class_space(k)?;
    if arch.output != class_space.width() {
        return Err(invalid(format!(
            "mode {} needs output width {} but architecture has {}",
            config.mode.as_str(),
            class_space.width(),
            arch.output
        )));
    }
    if arch.input_dim != dataset.dim() {
        return Err(invalid(format!("architecture input {} vs data dimension {}", arch.input_dim, dataset.dim())));
    }
    let labelaug = match config.mode {
        TrainMode::AdvPlus => Some(LabelAugConfig::adversarial(k, config.delta)?),
        _ => None,
    };

    let start = Instant::now();
    let mut model = init_params(arch, class_space, config.mode.operations(), config.seed)?;
    let mut velocity: Vec<(Tensor, Tensor)> = model
        .layers
        .iter()
        .map(|l| (Tensor::zeros(l.weight.shape()), Tensor::zeros(l.bias.shape())))
        .collect();
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr0, config.lr_min)?;
        let mut shuffler = rng::substream(rng::derive_seed(&[config.seed, 1, epoch as u64]), 0);
        order.shuffle(&mut shuffler);

        let (mut loss_sum, mut loss_rows) = (0.0, 0usize);
        let (mut clean_ok, mut adv_ok) = (0usize, 0usize);

        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = dataset.batch(idx)?;
            let rows = y.len();
            let attack = AttackConfig {
                seed: rng::derive_seed(&[config.attack.seed, config.seed, epoch as u64, batch as u64]),
                ..config.attack
            };

            let (inputs, targets, adversarial) = match config.mode {
                TrainMode::Std => (x.clone(), one_hot(&y, k)?, None),
                TrainMode::Adv => {
                    let adv = pgd(&model, &x, &y, &attack)?.adversarial;
                    (adv.clone(), one_hot(&y, k)?, Some(adv))
                }
                TrainMode::AdvPlus => {
                    let la = labelaug.as_ref().expect("adv_plus config");
                    let adv = pgd(&model, &x, &y, &attack)?.adversarial;
                    let clean_t = augmented_targets(&y, la.operation(IDENTITY)?, la)?;
                    let adv_t = augmented_targets(&y, la.operation(PGD)?, la)?;
                    (x.concat_rows(&adv)?, clean_t.concat_rows(&adv_t)?, Some(adv))
                }
            };

            observer(&BatchEvent { epoch, batch, clean: &x, adversarial: adversarial.as_ref(), epsilon: attack.epsilon });

            let (pass, grads) = model.param_gradients(&inputs, &targets, Objective::Full)?;
            loss_sum += pass.loss * inputs.rows() as f64;
            loss_rows += inputs.rows();

            match config.mode {
                TrainMode::Std => clean_ok += accuracy(&pass.logits, 0..rows, &y, class_space)?,
                TrainMode::Adv => {
                    adv_ok += accuracy(&pass.logits, 0..rows, &y, class_space)?;
                    let clean_pred = model.predict(&x)?;
                    clean_ok += clean_pred.iter().zip(&y).filter(|(p, t)| p == t).count();
                }
                TrainMode::AdvPlus => {
                    clean_ok += accuracy(&pass.logits, 0..rows, &y, class_space)?;
                    adv_ok += accuracy(&pass.logits, rows..2 * rows, &y, class_space)?;
                }
            }

            for ((layer, g), (vw, vb)) in model.layers.iter_mut().zip(&grads).zip(velocity.iter_mut()) {
                let (w, nvw) = sgd_momentum_step(&layer.weight, &g.weight, vw, lr, config.momentum)?;
                let (b, nvb) = sgd_momentum_step(&layer.bias, &g.bias, vb, lr, config.momentum)?;
                layer.weight = w;
                layer.bias = b;
                *vw = nvw;
                *vb = nvb;
            }
        }

        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / loss_rows as f64,
            clean_acc: clean_ok as f64 / n as f64,
            adv_acc: (config.mode != TrainMode::Std).then(|| adv_ok as f64 / n as f64),
        };
        log::debug!(
            "epoch {epoch} lr {lr:.3e} loss {:.4} clean_acc {:.4}",
            record.train_loss,
            record.clean_acc
        );
        records.push(record);
    }

    Ok((model, TrainHistory { records, wall_time_secs: start.elapsed().as_secs_f64() }))
}

/// Architecture with the output width required by `mode`.
pub fn arch_for(mode: TrainMode, input_dim: usize, hidden: Vec<usize>, k: usize) -> Arch {
    Arch::new(input_dim, hidden, k + mode.operations().len())
}
