//! Robustness metrics: clean error, class-wise error statistics,
//! corruption errors (CE, mCE), robust error, factor error ratios,
//! multi-label error and relative change.
//!
//! Every model-level metric has a `*_from` twin operating on a prediction
//! log, so published numbers can be fed through the same arithmetic.

mod report;

use std::collections::{BTreeMap, BTreeSet};

pub use report::{
    comparison_table, read_report, write_corruption_grid_csv, write_error_ratios_csv, write_per_class_csv, write_report,
    ClassError, EvaluationReport, GridCell, ReportMetadata, SCHEMA_VERSION,
};

use crate::attacks::{pgd, AttackConfig};
use crate::corruptions::{CorruptionKind, CorruptionSuite, SEVERITIES};
use crate::dataio::LabeledDataset;
use crate::error::{invalid, Result};
use crate::model::ModelParams;

/// Fraction of positions where `predictions` and `labels` differ.
pub fn error_rate(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(invalid("no examples"));
    }
    if predictions.len() != labels.len() {
        return Err(invalid(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / predictions.len() as f64)
}

pub fn predict_dataset(model: &ModelParams, dataset: &LabeledDataset) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return Err(invalid("empty dataset"));
    }
    model.predict(dataset.images())
}

pub fn clean_error(model: &ModelParams, dataset: &LabeledDataset) -> Result<f64> {
    error_rate(&predict_dataset(model, dataset)?, dataset.labels())
}

/// Per-class errors with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    /// Error per class present in the evaluated set.
    pub per_class: BTreeMap<usize, f64>,
    pub mean: f64,
    pub sd: f64,
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Class-wise statistics from a per-example correctness log. Classes with
/// no examples are skipped with a warning.
pub fn class_stats_from(correct: &[bool], labels: &[usize], k: usize) -> Result<ClassStats> {
    if correct.is_empty() {
        return Err(invalid("no examples"));
    }
    if correct.len() != labels.len() {
        return Err(invalid(format!("{} outcomes for {} labels", correct.len(), labels.len())));
    }
    let mut counts = vec![(0usize, 0usize); k];
    for (&ok, &y) in correct.iter().zip(labels) {
        let c = counts.get_mut(y).ok_or_else(|| invalid(format!("label {y} >= K = {k}")))?;
        c.0 += usize::from(!ok);
        c.1 += 1;
    }
    let mut per_class = BTreeMap::new();
    for (class, (wrong, total)) in counts.into_iter().enumerate() {
        if total == 0 {
            log::warn!("class {class} has no test examples; excluded from class-wise statistics");
            continue;
        }
        per_class.insert(class, wrong as f64 / total as f64);
    }
    let values: Vec<f64> = per_class.values().copied().collect();
    let (mean, sd) = mean_sd(&values);
    Ok(ClassStats { per_class, mean, sd })
}

pub fn per_class_stats_from(predictions: &[usize], labels: &[usize], k: usize) -> Result<ClassStats> {
    if predictions.len() != labels.len() {
        return Err(invalid(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let correct: Vec<bool> = predictions.iter().zip(labels).map(|(p, y)| p == y).collect();
    class_stats_from(&correct, labels, k)
}

pub fn per_class_stats(model: &ModelParams, dataset: &LabeledDataset) -> Result<ClassStats> {
    per_class_stats_from(&predict_dataset(model, dataset)?, dataset.labels(), dataset.num_classes())
}

/// Unweighted mean over severities 1..=5; all five must be present.
pub fn corruption_error_from(severity_errors: &BTreeMap<u8, f64>) -> Result<f64> {
    let mut sum = 0.0;
    for s in SEVERITIES {
        sum += severity_errors
            .get(&s)
            .ok_or_else(|| invalid(format!("missing severity {s}")))?;
    }
    Ok(sum / SEVERITIES.count() as f64)
}

/// Error at each severity of one corruption.
pub fn severity_errors(model: &ModelParams, suite: &CorruptionSuite, kind: CorruptionKind) -> Result<BTreeMap<u8, f64>> {
    let mut out = BTreeMap::new();
    for s in SEVERITIES {
        let set = suite
            .get(kind, s)
            .ok_or_else(|| invalid(format!("suite lacks {kind} severity {s}")))?;
        out.insert(s, clean_error(model, set)?);
    }
    Ok(out)
}

pub fn corruption_error(model: &ModelParams, suite: &CorruptionSuite, kind: CorruptionKind) -> Result<f64> {
    corruption_error_from(&severity_errors(model, suite, kind)?)
}

/// Unweighted mean of the available corruption errors.
pub fn mce(ce: &BTreeMap<String, f64>) -> Result<f64> {
    if ce.is_empty() {
        return Err(invalid("no corruption errors"));
    }
    Ok(ce.values().sum::<f64>() / ce.len() as f64)
}

/// Predictions on PGD-attacked copies of the dataset.
pub fn robust_predictions(model: &ModelParams, dataset: &LabeledDataset, attack: &AttackConfig) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return Err(invalid("empty dataset"));
    }
    let adv = pgd(model, dataset.images(), dataset.labels(), attack)?;
    model.predict(&adv.adversarial)
}

pub fn robust_error(model: &ModelParams, dataset: &LabeledDataset, attack: &AttackConfig) -> Result<f64> {
    error_rate(&robust_predictions(model, dataset, attack)?, dataset.labels())
}

/// `(1 - acc(factor)) / (1 - acc(all))` from a prediction log.
pub fn error_ratio_from(predictions: &[usize], labels: &[usize], tags: &[String], factor: &str) -> Result<f64> {
    if tags.len() != labels.len() {
        return Err(invalid(format!("{} tags for {} labels", tags.len(), labels.len())));
    }
    let overall = error_rate(predictions, labels)?;
    if overall == 0.0 {
        return Err(invalid("overall error is zero; error ratio undefined"));
    }
    let (mut wrong, mut total) = (0usize, 0usize);
    for ((p, y), t) in predictions.iter().zip(labels).zip(tags) {
        if t == factor {
            total += 1;
            wrong += usize::from(p != y);
        }
    }
    if total == 0 {
        return Err(invalid(format!("no examples tagged `{factor}`")));
    }
    Ok((wrong as f64 / total as f64) / overall)
}

pub fn error_ratio(model: &ModelParams, dataset: &LabeledDataset, factor: &str) -> Result<f64> {
    let tags = dataset.factor_tags().ok_or_else(|| invalid("dataset has no factor tags"))?;
    error_ratio_from(&predict_dataset(model, dataset)?, dataset.labels(), tags, factor)
}

/// Error ratio of every distinct tag.
pub fn error_ratios_from(predictions: &[usize], labels: &[usize], tags: &[String]) -> Result<BTreeMap<String, f64>> {
    let distinct: BTreeSet<&String> = tags.iter().collect();
    distinct
        .into_iter()
        .map(|t| Ok((t.clone(), error_ratio_from(predictions, labels, tags, t)?)))
        .collect()
}

/// Per-example "prediction is acceptable" flags.
pub fn multilabel_correct(predictions: &[usize], label_sets: &[BTreeSet<usize>]) -> Result<Vec<bool>> {
    if predictions.len() != label_sets.len() {
        return Err(invalid(format!("{} predictions for {} label sets", predictions.len(), label_sets.len())));
    }
    predictions
        .iter()
        .zip(label_sets)
        .enumerate()
        .map(|(i, (p, s))| {
            if s.is_empty() {
                Err(invalid(format!("empty label set at example {i}")))
            } else {
                Ok(s.contains(p))
            }
        })
        .collect()
}

/// Fraction of predictions outside their acceptable-label set.
pub fn multilabel_error_from(predictions: &[usize], label_sets: &[BTreeSet<usize>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(invalid("no examples"));
    }
    let ok = multilabel_correct(predictions, label_sets)?;
    Ok(ok.iter().filter(|&&c| !c).count() as f64 / ok.len() as f64)
}

pub fn multilabel_error(model: &ModelParams, dataset: &LabeledDataset) -> Result<f64> {
    let sets = dataset.label_sets().ok_or_else(|| invalid("dataset has no label sets"))?;
    multilabel_error_from(&predict_dataset(model, dataset)?, sets)
}

/// Rounds half-up (towards +∞ on ties) to `decimals` places.
pub fn round_half_up(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (value * scale + 0.5).floor() / scale
}

/// Percentage change `100 (before - after) / before`: positive when the
/// error went down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeChange {
    pub value: f64,
}

impl RelativeChange {
    /// Two-decimal value for reporting.
    pub fn rounded(&self) -> f64 {
        round_half_up(self.value, 2)
    }

    /// Rounded value in integer hundredths of a percent.
    pub fn hundredths(&self) -> i64 {
        (self.value * 100.0 + 0.5).floor() as i64
    }

    /// Prose form with the magnitude: "improvement by 53.50%" or
    /// "degradation by 54.19%".
    pub fn describe(&self) -> String {
        let h = self.hundredths();
        let word = if h < 0 { "degradation" } else { "improvement" };
        let a = h.unsigned_abs();
        format!("{word} by {}.{:02}%", a / 100, a % 100)
    }
}

impl std::fmt::Display for RelativeChange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let h = self.hundredths();
        let sign = if h < 0 { "-" } else { "" };
        let a = h.unsigned_abs();
        write!(f, "{sign}{}.{:02}", a / 100, a % 100)
    }
}

pub fn relative_change(before: f64, after: f64) -> Result<RelativeChange> {
    if before == 0.0 {
        return Err(invalid("relative change from zero is undefined"));
    }
    Ok(RelativeChange { value: 100.0 * (before - after) / before })
}

/// What [`evaluate_model`] should run beyond the clean metrics.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions<'a> {
    pub suite: Option<&'a CorruptionSuite>,
    pub attack: Option<AttackConfig>,
    pub model_id: String,
    pub dataset_id: String,
    pub seeds: BTreeMap<String, u64>,
}

fn class_errors(stats: &ClassStats) -> Vec<ClassError> {
    stats.per_class.iter().map(|(&class_id, &error)| ClassError { class_id, error }).collect()
}

/// Full evaluation battery. Factor ratios and multi-label metrics are
/// included when the dataset carries tags or label sets; corruption and
/// robust sections when `options` provides a suite or an attack.
pub fn evaluate_model(model: &ModelParams, dataset: &LabeledDataset, options: &EvalOptions<'_>) -> Result<EvaluationReport> {
    let k = dataset.num_classes();
    let preds = predict_dataset(model, dataset)?;
    let labels = dataset.labels();
    let stats = per_class_stats_from(&preds, labels, k)?;
    let mut report = EvaluationReport::new(error_rate(&preds, labels)?, stats.mean, stats.sd);
    report.per_class_errors = class_errors(&stats);

    if let Some(suite) = options.suite {
        let mut ce = BTreeMap::new();
        let mut grid = Vec::new();
        for kind in suite.kinds() {
            let sev = severity_errors(model, suite, kind)?;
            grid.extend(sev.iter().map(|(&severity, &error)| GridCell { corruption: kind.to_string(), severity, error }));
            ce.insert(kind.to_string(), corruption_error_from(&sev)?);
        }
        if !ce.is_empty() {
            report.mce = Some(mce(&ce)?);
            report.metadata.corruption_count = Some(ce.len());
            report.ce_per_corruption = Some(ce);
            report.corruption_grid = Some(grid);
        }
    }

    if let Some(attack) = &options.attack {
        let rp = robust_predictions(model, dataset, attack)?;
        let rs = per_class_stats_from(&rp, labels, k)?;
        report.robust_error = Some(error_rate(&rp, labels)?);
        report.robust_attack = Some(*attack);
        report.robust_per_class_errors = Some(class_errors(&rs));
        report.robust_class_mean = Some(rs.mean);
        report.robust_class_sd = Some(rs.sd);
    }

    if let Some(tags) = dataset.factor_tags() {
        if report.clean_error > 0.0 {
            report.error_ratios = Some(error_ratios_from(&preds, labels, tags)?);
        } else {
            log::warn!("clean error is zero; error ratios undefined and omitted");
        }
    }

    if let Some(sets) = dataset.label_sets() {
        let ok = multilabel_correct(&preds, sets)?;
        let ms = class_stats_from(&ok, labels, k)?;
        report.multilabel_error = Some(multilabel_error_from(&preds, sets)?);
        report.multilabel_class_mean = Some(ms.mean);
        report.multilabel_class_sd = Some(ms.sd);
    }

    report.metadata.model_id = options.model_id.clone();
    report.metadata.dataset_id = options.dataset_id.clone();
    report.metadata.seeds = options.seeds.clone();
    Ok(report)
}
