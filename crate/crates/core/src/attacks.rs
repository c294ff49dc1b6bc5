//! ℓ∞ gradient attacks: FGSM, BIM and PGD.
//!
//! Each example is attacked independently: the model loss is summed over
//! the batch, so row `i` of the input gradient depends on example `i`
//! alone, and random starts use substream `seed + i`. Splitting a batch
//! and concatenating the pieces therefore reproduces the whole-batch
//! result bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::labelaug::{augmented_targets, LabelAugConfig, OperationId};
use crate::model::{one_hot, predict_class, ModelParams, Objective};
use crate::numcore::Tensor;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Linf,
}

/// Loss maximised by the attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackLoss {
    /// Cross-entropy of the true class over the `K` content logits.
    #[default]
    Content,
    /// Label-augmented loss against `augment_label(y, operation, delta)`.
    LabelAugmented { delta: f64, operation: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_start: bool,
    pub seed: u64,
    #[serde(default)]
    pub norm: Norm,
    #[serde(default)]
    pub loss: AttackLoss,
}

/// Default step size for a `steps`-step attack with budget `epsilon`.
pub fn default_alpha(epsilon: f64, steps: usize) -> f64 {
    2.5 * epsilon / steps as f64
}

impl AttackConfig {
    /// PGD with the default step size and no random start.
    pub fn pgd(epsilon: f64, steps: usize) -> Self {
        Self {
            epsilon,
            alpha: default_alpha(epsilon, steps.max(1)),
            steps,
            random_start: false,
            seed: 0,
            norm: Norm::Linf,
            loss: AttackLoss::Content,
        }
    }

    /// PGD-40, ε = 0.03, deterministic start: the evaluation attack.
    pub fn evaluation() -> Self {
        Self::pgd(0.03, 40)
    }

    /// PGD-10, ε = 0.03, random start: the training attack.
    pub fn training() -> Self {
        Self { random_start: true, ..Self::pgd(0.03, 10) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be >= 1"));
        }
        if let AttackLoss::LabelAugmented { delta, .. } = self.loss {
            if !(0.0..1.0).contains(&delta) {
                return Err(invalid(format!("label-augmented attack delta must lie in [0, 1), got {delta}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Tensor,
    /// `adversarial - x`.
    pub perturbation: Tensor,
    /// Per-example attack loss at the returned point.
    pub losses: Vec<f64>,
    /// Whether the predicted class differs from the clean prediction.
    pub success: Vec<bool>,
}

impl AttackResult {
    pub fn max_linf(&self) -> f64 {
        self.perturbation.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn success_rate(&self) -> f64 {
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clip_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Clamps `candidate` into `[origin - ε, origin + ε]`, then into `[0, 1]`.
pub fn project_linf(candidate: &Tensor, origin: &Tensor, epsilon: f64) -> Result<Tensor> {
    if candidate.shape() != origin.shape() {
        return Err(Error::Shape {
            node: "project_linf".into(),
            detail: format!("candidate {:?} vs origin {:?}", candidate.shape(), origin.shape()),
        });
    }
    let data = candidate
        .data()
        .iter()
        .zip(origin.data())
        .map(|(&c, &o)| clip_unit(c.clamp(o - epsilon, o + epsilon)))
        .collect();
    Tensor::new(candidate.shape().to_vec(), data)
}

fn check_inputs(model: &ModelParams, x: &Tensor, y: &[usize]) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != model.input_dim() {
        return Err(Error::Shape {
            node: "x".into(),
            detail: format!("batch {:?} but model expects [n, {}]", x.shape(), model.input_dim()),
        });
    }
    if y.len() != x.rows() {
        return Err(invalid(format!("{} labels for {} examples", y.len(), x.rows())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= model.class_space.k()) {
        return Err(invalid(format!("label {bad} out of range for K = {}", model.class_space.k())));
    }
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("attack inputs must lie in [0, 1]"));
    }
    Ok(())
}

fn targets_for(model: &ModelParams, y: &[usize], loss: AttackLoss) -> Result<(Tensor, Objective)> {
    match loss {
        AttackLoss::Content => Ok((one_hot(y, model.class_space.k())?, Objective::Content)),
        AttackLoss::LabelAugmented { delta, operation } => {
            let cs = model.class_space;
            let registry = (0..cs.m())
                .map(|i| OperationId {
                    index: i,
                    name: model.operations.get(i).cloned().unwrap_or_default(),
                })
                .collect();
            let cfg = LabelAugConfig::new(delta, cs, registry)?;
            let op = cfg
                .registry()
                .get(operation)
                .ok_or_else(|| invalid(format!("operation {operation} out of range for M = {}", cs.m())))?
                .clone();
            Ok((augmented_targets(y, &op, &cfg)?, Objective::Full))
        }
    }
}

fn finish(model: &ModelParams, x: &Tensor, adv: Tensor, targets: &Tensor, objective: Objective) -> Result<AttackResult> {
    let clean = model.predict(x)?;
    let pass = model.losses(&adv, targets, objective)?;
    let success = pass
        .logits
        .iter_rows()
        .zip(&clean)
        .map(|(row, &c)| predict_class(row, model.class_space).map(|p| p != c))
        .collect::<Result<Vec<_>>>()?;
    let perturbation = Tensor::new(
        x.shape().to_vec(),
        adv.data().iter().zip(x.data()).map(|(a, b)| a - b).collect(),
    )?;
    Ok(AttackResult { adversarial: adv, perturbation, losses: pass.losses, success })
}

/// `x' = clip(x + ε sign(∇_x L(x, y)))` with `L` the content cross-entropy.
pub fn fgsm(model: &ModelParams, x: &Tensor, y: &[usize], epsilon: f64) -> Result<AttackResult> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    check_inputs(model, x, y)?;
    let (targets, objective) = targets_for(model, y, AttackLoss::Content)?;
    let (_, g) = model.input_gradient(x, &targets, objective)?;
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xi, &gi)| clip_unit(xi + epsilon * sign(gi)))
        .collect();
    let adv = Tensor::new(x.shape().to_vec(), data)?;
    finish(model, x, adv, &targets, objective)
}

/// Projected gradient ascent on the attack loss inside the ε-ball.
pub fn pgd(model: &ModelParams, x: &Tensor, y: &[usize], config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    check_inputs(model, x, y)?;
    let (targets, objective) = targets_for(model, y, config.loss)?;
    let eps = config.epsilon;

    let mut current = if config.random_start {
        let mut start = x.clone();
        let cols = x.cols();
        for i in 0..x.rows() {
            let mut r = rng::substream(config.seed.wrapping_add(i as u64), 0);
            for v in &mut start.data_mut()[i * cols..(i + 1) * cols] {
                *v = clip_unit(*v + rng::uniform(&mut r, -eps, eps));
            }
        }
        project_linf(&start, x, eps)?
    } else {
        x.clone()
    };

    for _ in 0..config.steps {
        let (_, g) = model.input_gradient(&current, &targets, objective)?;
        let data = current
            .data()
            .iter()
            .zip(g.data())
            .map(|(&xi, &gi)| clip_unit(xi + config.alpha * sign(gi)))
            .collect();
        current = project_linf(&Tensor::new(x.shape().to_vec(), data)?, x, eps)?;
    }
    finish(model, x, current, &targets, objective)
}

/// Basic iterative method: PGD without a random start.
pub fn bim(model: &ModelParams, x: &Tensor, y: &[usize], epsilon: f64, alpha: f64, steps: usize) -> Result<AttackResult> {
    let config = AttackConfig {
        epsilon,
        alpha,
        steps,
        random_start: false,
        seed: 0,
        norm: Norm::Linf,
        loss: AttackLoss::Content,
    };
    pgd(model, x, y, &config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Arch, ClassSpace};

    fn linear_model(w: Vec<f64>, d: usize, k: usize) -> ModelParams {
        let mut p = init_params(&Arch::new(d, vec![], k), ClassSpace::new(k, 0).unwrap(), vec![], 0).unwrap();
        p.layers[0].weight = Tensor::matrix(k, d, w).unwrap();
        p
    }

    #[test]
    fn projection_examples() {
        let o = Tensor::vector(vec![0.5, 0.01, 0.3]);
        let inside = Tensor::vector(vec![0.51, 0.0, 0.29]);
        assert_eq!(project_linf(&inside, &o, 0.03).unwrap(), inside);
        let p = project_linf(&Tensor::vector(vec![0.9, 0.5, 0.3]), &o, 0.03).unwrap();
        assert!((p.data()[0] - 0.53).abs() < 1e-15);
        let p = project_linf(&Tensor::vector(vec![-0.2]), &Tensor::vector(vec![0.01]), 0.05).unwrap();
        assert_eq!(p.data(), &[0.0]);
        assert!(project_linf(&Tensor::vector(vec![0.1]), &o, 0.1).is_err());
    }

    #[test]
    fn fgsm_moves_against_gradient_sign() {
        // Two classes, one pixel. Logit gap z1 - z0 = 2x, true class 1:
        // d(loss)/dx < 0, so FGSM decreases x.
        let p = linear_model(vec![0.0, 2.0], 1, 2);
        let x = Tensor::matrix(1, 1, vec![0.5]).unwrap();
        let r = fgsm(&p, &x, &[1], 0.03).unwrap();
        assert!((r.adversarial.data()[0] - 0.47).abs() < 1e-15);
    }

    #[test]
    fn constant_model_leaves_input_unchanged() {
        let p = linear_model(vec![0.0; 6], 3, 2);
        let x = Tensor::matrix(1, 3, vec![0.2, 0.4, 0.9]).unwrap();
        let r = fgsm(&p, &x, &[0], 0.1).unwrap();
        assert_eq!(r.adversarial, x);
        assert_eq!(r.success, vec![false]);
    }

    #[test]
    fn validation() {
        let p = linear_model(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let x = Tensor::matrix(1, 2, vec![0.2, 0.4]).unwrap();
        assert!(fgsm(&p, &x, &[0], 0.0).is_err());
        assert!(fgsm(&p, &x, &[2], 0.1).is_err());
        assert!(fgsm(&p, &Tensor::matrix(1, 3, vec![0.0; 3]).unwrap(), &[0], 0.1).is_err());
        assert!(fgsm(&p, &Tensor::matrix(1, 2, vec![0.0, 1.5]).unwrap(), &[0], 0.1).is_err());
        let mut cfg = AttackConfig::pgd(0.03, 0);
        assert!(pgd(&p, &x, &[0], &cfg).is_err());
        cfg.steps = 1;
        cfg.alpha = 0.0;
        assert!(pgd(&p, &x, &[0], &cfg).is_err());
    }

    #[test]
    fn tiny_ball_keeps_input() {
        let p = linear_model(vec![1.0, -2.0, 0.5, 3.0], 2, 2);
        let x = Tensor::matrix(2, 2, vec![0.2, 0.4, 0.0, 1.0]).unwrap();
        let cfg = AttackConfig { random_start: true, ..AttackConfig::pgd(1e-9, 5) };
        let r = pgd(&p, &x, &[0, 1], &cfg).unwrap();
        assert!(r.max_linf() <= 1e-9 + 1e-12);
    }

    #[test]
    fn batch_split_matches_whole_batch() {
        let arch = Arch::new(3, vec![5], 2);
        let p = init_params(&arch, ClassSpace::new(2, 0).unwrap(), vec![], 9).unwrap();
        let x = Tensor::matrix(3, 3, vec![0.1, 0.5, 0.9, 0.3, 0.3, 0.3, 0.8, 0.0, 1.0]).unwrap();
        let y = [0, 1, 1];
        let cfg = AttackConfig { random_start: true, seed: 17, ..AttackConfig::pgd(0.1, 4) };
        let full = pgd(&p, &x, &y, &cfg).unwrap();
        for i in 0..3 {
            let xi = x.select_rows(&[i]).unwrap();
            let ci = AttackConfig { seed: 17 + i as u64, ..cfg };
            let part = pgd(&p, &xi, &y[i..=i], &ci).unwrap();
            assert_eq!(part.adversarial.data(), full.adversarial.row(i));
        }
    }

    #[test]
    fn label_augmented_loss_option_runs() {
        let arch = Arch::new(3, vec![4], 4);
        let p = init_params(&arch, ClassSpace::new(2, 2).unwrap(), vec!["identity".into(), "pgd".into()], 2).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.4, 0.5, 0.6]).unwrap();
        let cfg = AttackConfig {
            loss: AttackLoss::LabelAugmented { delta: 0.03, operation: 1 },
            ..AttackConfig::pgd(0.05, 3)
        };
        let r = pgd(&p, &x, &[1], &cfg).unwrap();
        assert!(r.max_linf() <= 0.05 + 1e-12);
        let bad = AttackConfig { loss: AttackLoss::LabelAugmented { delta: 0.03, operation: 2 }, ..cfg };
        assert!(pgd(&p, &x, &[1], &bad).is_err());
    }
}
