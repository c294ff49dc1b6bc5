use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{merge, DataSpec, RunConfig};
use super::{usage, AttackArgs, AttackFlags, CliError, CorruptArgs, EvalArgs, ReportArgs, TrainArgs};
use crate::attacks::{default_alpha, pgd, AttackConfig};
use crate::corruptions::build_corruption_suite;
use crate::dataio::{write_dataset_idx, DatasetManifest, LabeledDataset, Layout};
use crate::error::{Error, Result};
use crate::metrics::{
    comparison_table, read_report, write_corruption_grid_csv, write_error_ratios_csv, write_per_class_csv, write_report,
};
use crate::metrics::{error_rate, evaluate_model, predict_dataset, EvalOptions};
use crate::model::{read_checkpoint, write_checkpoint};
use crate::model::ModelParams;
use crate::training::{arch_for, train as run_training, TrainConfig, TrainMode};

/// Held-out split used when a command other than `train` gets no data.
const DEFAULT_EVAL_DATA: &str = "blobs:n=200,split=1";
const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

fn data_spec(flag: &Option<String>, file: &RunConfig, fallback: &str) -> Result<DataSpec, CliError> {
    let text = merge("data", flag.clone(), file.data.spec.as_ref()).unwrap_or_else(|| fallback.to_string());
    let spec: DataSpec = text.parse().map_err(usage)?;
    spec.check_paths().map_err(usage)?;
    Ok(spec)
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn check_model_path(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())))
    }
}

/// Attack settings: flags, then the `[attack]` table, then `base`.
fn attack_config(flags: &AttackFlags, seed: Option<u64>, file: &RunConfig, base: AttackConfig) -> Result<AttackConfig, CliError> {
    let f = &file.attack;
    let epsilon = merge("epsilon", flags.epsilon, f.epsilon.as_ref()).unwrap_or(base.epsilon);
    let steps = merge("steps", flags.steps, f.steps.as_ref()).unwrap_or(base.steps);
    let alpha = merge("alpha", flags.alpha, f.alpha.as_ref()).unwrap_or_else(|| default_alpha(epsilon, steps.max(1)));
    let random_start = merge("random-start", flags.random_start, f.random_start.as_ref()).unwrap_or(base.random_start);
    let seed = merge("seed", seed, f.seed.as_ref()).unwrap_or(base.seed);
    let cfg = AttackConfig { epsilon, alpha, steps, random_start, seed, ..base };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn check_dims(model: &ModelParams, data: &LabeledDataset) -> Result<(), CliError> {
    if model.input_dim() != data.dim() {
        return Err(CliError::Usage(format!(
            "model expects {} inputs but the data has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    if model.class_space.k() != data.num_classes() {
        return Err(CliError::Usage(format!(
            "model has {} classes but the data has {}",
            model.class_space.k(),
            data.num_classes()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    data: String,
    hidden: &'a [usize],
    config: &'a TrainConfig,
    k: usize,
    m: usize,
    operations: &'a [String],
    final_train_loss: f64,
    /// Not covered by the determinism guarantee.
    wall_time_secs: f64,
}

pub fn train(a: &TrainArgs, file: &RunConfig, out: &Path) -> Result<(), CliError> {
    let t = &file.train;
    let data = data_spec(&a.data, file, "blobs")?;
    let mode: TrainMode = merge("mode", a.mode.clone(), t.mode.as_ref())
        .unwrap_or_else(|| "std".into())
        .parse()
        .map_err(usage)?;
    let defaults = TrainConfig::default();
    let lr0 = merge("lr", a.lr, t.lr.as_ref()).unwrap_or(defaults.lr0);
    let seed = merge("seed", a.seed, t.seed.as_ref()).unwrap_or(defaults.seed);
    let config = TrainConfig {
        mode,
        epochs: merge("epochs", a.epochs, t.epochs.as_ref()).unwrap_or(defaults.epochs),
        batch_size: merge("batch-size", a.batch_size, t.batch_size.as_ref()).unwrap_or(defaults.batch_size),
        lr0,
        lr_min: merge("lr-min", a.lr_min, t.lr_min.as_ref()).unwrap_or(lr0 * 1e-4),
        momentum: merge("momentum", a.momentum, t.momentum.as_ref()).unwrap_or(defaults.momentum),
        attack: attack_config(&a.attack, None, file, AttackConfig::training())?,
        delta: merge("delta", a.delta, t.delta.as_ref()).unwrap_or(defaults.delta),
        seed,
    };
    config.validate().map_err(usage)?;
    let hidden = merge("hidden", a.hidden.clone(), t.hidden.as_ref()).unwrap_or_else(|| DEFAULT_HIDDEN.to_vec());

    let dataset = data.load()?;
    let arch = arch_for(mode, dataset.dim(), hidden.clone(), dataset.num_classes());
    arch.validate().map_err(usage)?;
    log::info!("training {} on {} ({} examples)", mode.as_str(), data, dataset.len());
    let (model, history) = run_training(&dataset, &arch, &config)?;

    ensure_dir(out)?;
    write_checkpoint(&model, &out.join("model.ckpt"))?;
    history.write_csv(&out.join("history.csv"))?;
    let summary = TrainSummary {
        data: data.to_string(),
        hidden: &hidden,
        config: &config,
        k: model.class_space.k(),
        m: model.class_space.m(),
        operations: &model.operations,
        final_train_loss: history.records.last().map_or(f64::NAN, |r| r.train_loss),
        wall_time_secs: history.wall_time_secs,
    };
    write_json(&summary, &out.join("train_summary.json"))?;
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(())
}

#[derive(Serialize)]
struct AttackSummary<'a> {
    model: String,
    data: String,
    n: usize,
    attack: &'a AttackConfig,
    success_rate: f64,
    max_linf: f64,
    mean_loss: f64,
    clean_error: f64,
    adversarial_error: f64,
}

pub fn attack(a: &AttackArgs, file: &RunConfig, out: &Path) -> Result<(), CliError> {
    check_model_path(&a.model)?;
    let data = data_spec(&a.data, file, DEFAULT_EVAL_DATA)?;
    let cfg = attack_config(&a.attack, a.seed, file, AttackConfig::evaluation())?;
    let model = read_checkpoint(&a.model)?;
    let dataset = data.load()?;
    check_dims(&model, &dataset)?;

    let result = pgd(&model, dataset.images(), dataset.labels(), &cfg)?;
    let adv_set = dataset.with_images(result.adversarial.clone())?;
    let adv_preds = predict_dataset(&model, &adv_set)?;
    let summary = AttackSummary {
        model: a.model.display().to_string(),
        data: data.to_string(),
        n: dataset.len(),
        attack: &cfg,
        success_rate: result.success_rate(),
        max_linf: result.max_linf(),
        mean_loss: result.losses.iter().sum::<f64>() / result.losses.len() as f64,
        clean_error: error_rate(&predict_dataset(&model, &dataset)?, dataset.labels())?,
        adversarial_error: error_rate(&adv_preds, dataset.labels())?,
    };

    ensure_dir(out)?;
    write_dataset_idx(&adv_set, &out.join("adv-images.idx"), &out.join("adv-labels.idx"))?;
    manifest(&adv_set, format!("pgd({}) on {}", a.model.display(), data), data.seed()).write(&out.join("adv-manifest.json"))?;
    write_json(&summary, &out.join("attack_summary.json"))?;
    println!(
        "success rate {:.4}, max linf {:.6} (epsilon {})",
        summary.success_rate, summary.max_linf, cfg.epsilon
    );
    Ok(())
}

fn manifest(ds: &LabeledDataset, source: String, seed: Option<u64>) -> DatasetManifest {
    DatasetManifest {
        source,
        seed,
        k: ds.num_classes(),
        n: ds.len(),
        layout: ds.layout(),
        factor_tags: None,
        label_sets: None,
        extra: BTreeMap::new(),
    }
}

/// Report names: the checkpoint stem, or the parent directory for
/// `model.ckpt`; duplicates get a numeric suffix.
fn model_ids(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let base = if stem == "model" {
                p.parent()
                    .and_then(|d| d.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or(stem)
            } else {
                stem
            };
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}-{n}")
            }
        })
        .collect()
}

pub fn eval(a: &EvalArgs, file: &RunConfig, out: &Path) -> Result<(), CliError> {
    for p in &a.model {
        check_model_path(p)?;
    }
    let data = data_spec(&a.data, file, DEFAULT_EVAL_DATA)?;
    let attack = if a.no_attack {
        None
    } else {
        Some(attack_config(&a.attack, a.seed, file, AttackConfig::evaluation())?)
    };
    let use_suite = a.corruptions || file.corruptions.enabled.unwrap_or(false);
    let suite_seed = merge("suite-seed", a.suite_seed, file.corruptions.seed.as_ref()).unwrap_or(0);
    let specs = if use_suite { file.corruption_specs(suite_seed).map_err(usage)? } else { Vec::new() };

    let dataset = data.load()?;
    let models = a.model.iter().map(|p| read_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    for m in &models {
        check_dims(m, &dataset)?;
    }
    let suite = if use_suite { Some(build_corruption_suite(&dataset, &specs, suite_seed)?) } else { None };

    ensure_dir(out)?;
    let mut reports = Vec::new();
    for ((id, model), path) in model_ids(&a.model).into_iter().zip(&models).zip(&a.model) {
        let mut seeds = BTreeMap::from([("model".to_string(), model.seed)]);
        if let Some(s) = data.seed() {
            seeds.insert("data".into(), s);
        }
        if let Some(atk) = &attack {
            seeds.insert("attack".into(), atk.seed);
        }
        if use_suite {
            seeds.insert("suite".into(), suite_seed);
        }
        let options = EvalOptions {
            suite: suite.as_ref(),
            attack,
            model_id: id.clone(),
            dataset_id: data.to_string(),
            seeds,
        };
        log::info!("evaluating {} as {id}", path.display());
        let report = evaluate_model(model, &dataset, &options)?;
        let dir = out.join(&id);
        ensure_dir(&dir)?;
        write_report(&report, &dir.join("report.json"))?;
        write_per_class_csv(&report.per_class_errors, &dir.join("per_class.csv"))?;
        if let Some(grid) = &report.corruption_grid {
            write_corruption_grid_csv(grid, &dir.join("corruption_grid.csv"))?;
        }
        if let Some(ratios) = &report.error_ratios {
            write_error_ratios_csv(ratios, &dir.join("error_ratios.csv"))?;
        }
        reports.push((id, report));
    }
    let table = comparison_table(&reports);
    fs::write(out.join("comparison.txt"), &table).map_err(Error::from)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct SuiteEntry {
    corruption: String,
    severity: u8,
    images: String,
    labels: String,
}

#[derive(Serialize)]
struct SuiteManifest {
    source: String,
    suite_seed: u64,
    n: usize,
    k: usize,
    layout: Layout,
    entries: Vec<SuiteEntry>,
}

pub fn corrupt(a: &CorruptArgs, file: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = data_spec(&a.data, file, DEFAULT_EVAL_DATA)?;
    let seed = merge("seed", a.seed, file.corruptions.seed.as_ref()).unwrap_or(0);
    let specs = file.corruption_specs(seed).map_err(usage)?;
    let dataset = data.load()?;
    let suite = build_corruption_suite(&dataset, &specs, seed)?;

    ensure_dir(out)?;
    let mut entries = Vec::new();
    for ((kind, severity), ds) in &suite.sets {
        let images = format!("{kind}-s{severity}-images.idx");
        let labels = format!("{kind}-s{severity}-labels.idx");
        write_dataset_idx(ds, &out.join(&images), &out.join(&labels))?;
        entries.push(SuiteEntry { corruption: kind.to_string(), severity: *severity, images, labels });
    }
    let m = SuiteManifest {
        source: data.to_string(),
        suite_seed: seed,
        n: dataset.len(),
        k: dataset.num_classes(),
        layout: dataset.layout(),
        entries,
    };
    write_json(&m, &out.join("manifest.json"))?;
    println!("wrote {} corrupted sets to {}", suite.len(), out.display());
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    for p in &a.reports {
        if !p.is_file() {
            return Err(CliError::Usage(format!("report {} does not exist", p.display())));
        }
    }
    let mut reports = Vec::new();
    for p in &a.reports {
        let r = read_report(p)?;
        let name = if r.metadata.model_id.is_empty() {
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        } else {
            r.metadata.model_id.clone()
        };
        reports.push((name, r));
    }
    print!("{}", comparison_table(&reports));
    Ok(())
}
