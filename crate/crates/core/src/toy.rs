//! Fixed desk-scale experiment: four Gaussian blobs in 16 dimensions and a
//! two-hidden-layer MLP, trained under each regime.

use serde::{Deserialize, Serialize};

use crate::attacks::AttackConfig;
use crate::dataio::{synth_blobs_split, LabeledDataset};
use crate::error::Result;
use crate::metrics::{error_rate, per_class_stats_from, predict_dataset, robust_predictions};
use crate::model::ModelParams;
use crate::training::{arch_for, train, TrainConfig, TrainHistory, TrainMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySetup {
    pub k: usize,
    pub d: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub spread: f64,
    pub hidden: Vec<usize>,
}

impl Default for ToySetup {
    fn default() -> Self {
        Self { k: 4, d: 16, n_train: 400, n_test: 200, spread: 0.3, hidden: vec![64, 64] }
    }
}

/// Clean and PGD-40 metrics of one trained model on the held-out split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyOutcome {
    pub clean_error: f64,
    pub robust_error: f64,
    pub robust_class_sd: f64,
}

impl ToySetup {
    pub fn train_set(&self, seed: u64) -> Result<LabeledDataset> {
        synth_blobs_split(seed, self.n_train, self.k, self.d, self.spread, 0)
    }

    pub fn test_set(&self, seed: u64) -> Result<LabeledDataset> {
        synth_blobs_split(seed, self.n_test, self.k, self.d, self.spread, 1)
    }

    pub fn config(&self, mode: TrainMode, seed: u64) -> TrainConfig {
        TrainConfig { mode, seed, ..TrainConfig::default() }
    }

    pub fn train(&self, mode: TrainMode, seed: u64) -> Result<(ModelParams, TrainHistory)> {
        let arch = arch_for(mode, self.d, self.hidden.clone(), self.k);
        train(&self.train_set(seed)?, &arch, &self.config(mode, seed))
    }

    pub fn outcome(&self, model: &ModelParams, seed: u64) -> Result<ToyOutcome> {
        let test = self.test_set(seed)?;
        let clean = predict_dataset(model, &test)?;
        let robust = robust_predictions(model, &test, &AttackConfig::evaluation())?;
        Ok(ToyOutcome {
            clean_error: error_rate(&clean, test.labels())?,
            robust_error: error_rate(&robust, test.labels())?,
            robust_class_sd: per_class_stats_from(&robust, test.labels(), self.k)?.sd,
        })
    }

    /// Outcomes for std, adv and adv_plus (in that order) at one seed.
    pub fn run_seed(&self, seed: u64) -> Result<[ToyOutcome; 3]> {
        let mut out = [ToyOutcome { clean_error: 0.0, robust_error: 0.0, robust_class_sd: 0.0 }; 3];
        for (slot, mode) in out.iter_mut().zip([TrainMode::Std, TrainMode::Adv, TrainMode::AdvPlus]) {
            let (model, _) = self.train(mode, seed)?;
            *slot = self.outcome(&model, seed)?;
        }
        Ok(out)
    }
}
