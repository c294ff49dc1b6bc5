//! Label augmentation: targets `Concat[(1 - δ) y, δ z_op]` over `K + M`
//! classes and the matching soft-label cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{cross_entropy_soft, ClassSpace};
use crate::numcore::Tensor;

pub const IDENTITY: &str = "identity";
pub const PGD: &str = "pgd";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationId {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAugConfig {
    delta: f64,
    class_space: ClassSpace,
    registry: Vec<OperationId>,
}

impl LabelAugConfig {
    pub fn new(delta: f64, class_space: ClassSpace, registry: Vec<OperationId>) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(invalid(format!("delta must lie in [0, 1), got {delta}")));
        }
        if registry.len() != class_space.m() {
            return Err(invalid(format!(
                "registry has {} operations but M = {}",
                registry.len(),
                class_space.m()
            )));
        }
        for (i, op) in registry.iter().enumerate() {
            if op.index != i {
                return Err(invalid(format!("operation `{}` has index {} at position {i}", op.name, op.index)));
            }
        }
        Ok(Self { delta, class_space, registry })
    }

    /// `M = 2` registry `{identity, pgd}` over `k` content classes.
    pub fn adversarial(k: usize, delta: f64) -> Result<Self> {
        let registry = [IDENTITY, PGD]
            .iter()
            .enumerate()
            .map(|(index, name)| OperationId { index, name: name.to_string() })
            .collect();
        Self::new(delta, ClassSpace::new(k, 2)?, registry)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn class_space(&self) -> ClassSpace {
        self.class_space
    }

    pub fn registry(&self) -> &[OperationId] {
        &self.registry
    }

    pub fn operation_names(&self) -> Vec<String> {
        self.registry.iter().map(|o| o.name.clone()).collect()
    }

    pub fn operation(&self, name: &str) -> Result<&OperationId> {
        self.registry
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| invalid(format!("unknown operation `{name}`")))
    }
}

/// Probability vector of length `K + M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedLabel(Vec<f64>);

impl AugmentedLabel {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn augment_label(y: usize, op: &OperationId, config: &LabelAugConfig) -> Result<AugmentedLabel> {
    let cs = config.class_space;
    if y >= cs.k() {
        return Err(invalid(format!("class {y} out of range for K = {}", cs.k())));
    }
    if op.index >= cs.m() {
        return Err(invalid(format!("operation index {} out of range for M = {}", op.index, cs.m())));
    }
    let mut v = vec![0.0; cs.width()];
    v[y] = 1.0 - config.delta;
    v[cs.k() + op.index] = config.delta;
    Ok(AugmentedLabel(v))
}

/// `-Σ_k ỹ_k log p̃_k` over all `K + M` entries.
pub fn la_loss(p_tilde: &[f64], y_tilde: &AugmentedLabel) -> Result<f64> {
    cross_entropy_soft(p_tilde, y_tilde.as_slice())
}

/// Stacked augmented targets `[n, K + M]` for a batch sharing one operation.
pub fn augmented_targets(labels: &[usize], op: &OperationId, config: &LabelAugConfig) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(invalid("empty label batch"));
    }
    let mut data = Vec::with_capacity(labels.len() * config.class_space.width());
    for &y in labels {
        data.extend(augment_label(y, op, config)?.into_vec());
    }
    Tensor::matrix(labels.len(), config.class_space.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax;

    fn cfg(k: usize, m: usize, delta: f64) -> LabelAugConfig {
        let registry = (0..m).map(|i| OperationId { index: i, name: format!("op{i}") }).collect();
        LabelAugConfig::new(delta, ClassSpace::new(k, m).unwrap(), registry).unwrap()
    }

    #[test]
    fn concatenated_label_example() {
        let c = cfg(3, 2, 0.03);
        let v = augment_label(1, &c.registry()[0], &c).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.97, 0.0, 0.03, 0.0]);
        assert_eq!(v.as_slice().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn zero_delta_is_padded_one_hot() {
        let c = cfg(3, 2, 0.0);
        let v = augment_label(2, &c.registry()[1], &c).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_out_of_range() {
        let c = cfg(3, 2, 0.03);
        assert!(augment_label(3, &c.registry()[0], &c).is_err());
        let bogus = OperationId { index: 2, name: "x".into() };
        assert!(augment_label(0, &bogus, &c).is_err());
        assert!(LabelAugConfig::new(1.0, ClassSpace::new(2, 0).unwrap(), vec![]).is_err());
        assert!(LabelAugConfig::new(-0.1, ClassSpace::new(2, 0).unwrap(), vec![]).is_err());
        assert!(LabelAugConfig::new(0.1, ClassSpace::new(2, 1).unwrap(), vec![]).is_err());
    }

    #[test]
    fn la_loss_examples() {
        let c = cfg(3, 2, 0.03);
        let y = augment_label(0, &c.registry()[1], &c).unwrap();
        assert!((la_loss(&[0.2; 5], &y).unwrap() - 5f64.ln()).abs() < 1e-12);

        let c = cfg(2, 1, 0.03);
        let y = augment_label(0, &c.registry()[0], &c).unwrap();
        assert_eq!(y.as_slice(), &[0.97, 0.0, 0.03]);
        let v = la_loss(&[0.8, 0.1, 0.1], &y).unwrap();
        let expected = -(0.97 * 0.8f64.ln() + 0.03 * 0.1f64.ln());
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.2855).abs() < 1e-4);
        assert!(la_loss(&[0.5, 0.5], &y).is_err());
    }

    #[test]
    fn loss_is_affine_in_delta() {
        let p = softmax(&[0.3, -1.0, 0.8, 0.1]);
        let at = |d: f64| {
            let c = cfg(2, 2, d);
            la_loss(&p, &augment_label(1, &c.registry()[1], &c).unwrap()).unwrap()
        };
        let content = -p[1].ln();
        let operation = -p[3].ln();
        for d in [0.0, 0.5, 1.0 - 1e-9] {
            let expected = (1.0 - d) * content + d * operation;
            assert!((at(d) - expected).abs() < 1e-12, "delta {d}");
        }
    }

    #[test]
    fn adversarial_registry() {
        let c = LabelAugConfig::adversarial(4, 0.03).unwrap();
        assert_eq!(c.class_space().width(), 6);
        assert_eq!(c.operation(PGD).unwrap().index, 1);
        assert!(c.operation("blur").is_err());
    }
}
