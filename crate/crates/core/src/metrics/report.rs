//! JSON evaluation report, CSV exports and the comparison table.
//!
//! Schema (version 1): every error is a fraction in `[0, 1]`; class-wise
//! SDs are population standard deviations; sections that were not
//! evaluated are `null`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::relative_change;
use crate::attacks::AttackConfig;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassError {
    pub class_id: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub corruption: String,
    pub severity: u8,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model_id: String,
    pub dataset_id: String,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    pub corruption_count: Option<usize>,
    pub sd_kind: String,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        Self {
            model_id: String::new(),
            dataset_id: String::new(),
            seeds: BTreeMap::new(),
            corruption_count: None,
            sd_kind: "population".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub clean_error: f64,
    #[serde(default)]
    pub per_class_errors: Vec<ClassError>,
    pub class_mean: f64,
    pub class_sd: f64,
    pub ce_per_corruption: Option<BTreeMap<String, f64>>,
    pub corruption_grid: Option<Vec<GridCell>>,
    pub mce: Option<f64>,
    pub robust_error: Option<f64>,
    pub robust_attack: Option<AttackConfig>,
    pub robust_per_class_errors: Option<Vec<ClassError>>,
    pub robust_class_mean: Option<f64>,
    pub robust_class_sd: Option<f64>,
    pub error_ratios: Option<BTreeMap<String, f64>>,
    pub multilabel_error: Option<f64>,
    pub multilabel_class_mean: Option<f64>,
    pub multilabel_class_sd: Option<f64>,
    #[serde(default)]
    pub metadata: ReportMetadata,
}

impl EvaluationReport {
    /// Report with only the clean section filled in.
    pub fn new(clean_error: f64, class_mean: f64, class_sd: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            clean_error,
            per_class_errors: Vec::new(),
            class_mean,
            class_sd,
            ce_per_corruption: None,
            corruption_grid: None,
            mce: None,
            robust_error: None,
            robust_attack: None,
            robust_per_class_errors: None,
            robust_class_mean: None,
            robust_class_sd: None,
            error_ratios: None,
            multilabel_error: None,
            multilabel_class_mean: None,
            multilabel_class_sd: None,
            metadata: ReportMetadata::default(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let mut fractions: Vec<(&str, f64)> = vec![
            ("clean_error", self.clean_error),
            ("class_mean", self.class_mean),
        ];
        fractions.extend(self.per_class_errors.iter().map(|c| ("per_class_errors", c.error)));
        for (name, v) in [
            ("mce", self.mce),
            ("robust_error", self.robust_error),
            ("robust_class_mean", self.robust_class_mean),
            ("multilabel_error", self.multilabel_error),
            ("multilabel_class_mean", self.multilabel_class_mean),
        ] {
            if let Some(v) = v {
                fractions.push((name, v));
            }
        }
        if let Some(ce) = &self.ce_per_corruption {
            fractions.extend(ce.values().map(|&v| ("ce_per_corruption", v)));
        }
        if let Some(grid) = &self.corruption_grid {
            fractions.extend(grid.iter().map(|c| ("corruption_grid", c.error)));
        }
        if let Some(r) = &self.robust_per_class_errors {
            fractions.extend(r.iter().map(|c| ("robust_per_class_errors", c.error)));
        }
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} is not a fraction in [0, 1]"));
            }
        }
        for (name, v) in [
            ("class_sd", Some(self.class_sd)),
            ("robust_class_sd", self.robust_class_sd),
            ("multilabel_class_sd", self.multilabel_class_sd),
        ] {
            if let Some(v) = v {
                if !(0.0..=0.5).contains(&v) {
                    return Err(format!("{name} = {v} is not a valid SD of fractions"));
                }
            }
        }
        if let Some(ratios) = &self.error_ratios {
            if let Some((k, v)) = ratios.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                return Err(format!("error_ratios[{k}] = {v} is invalid"));
            }
        }
        if let (Some(ce), Some(m)) = (&self.ce_per_corruption, self.mce) {
            if ce.is_empty() {
                return Err("ce_per_corruption is empty but mce is set".into());
            }
            let mean = ce.values().sum::<f64>() / ce.len() as f64;
            if (mean - m).abs() > 1e-12 {
                return Err(format!("mce {m} differs from mean of ce_per_corruption {mean}"));
            }
        }
        Ok(())
    }
}

pub fn write_report(report: &EvaluationReport, path: &Path) -> Result<()> {
    report
        .validate()
        .map_err(|detail| Error::Report { path: path.to_path_buf(), detail })?;
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvaluationReport> {
    let text = std::fs::read_to_string(path)?;
    let ctx = |e: serde_json::Error| Error::Report {
        path: path.to_path_buf(),
        detail: format!("line {} column {}: {e}", e.line(), e.column()),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(ctx)?;
    match value.get("schema_version") {
        None => {
            return Err(Error::Report { path: path.to_path_buf(), detail: "missing field `schema_version`".into() });
        }
        Some(v) if v.as_u64() != Some(u64::from(SCHEMA_VERSION)) => {
            return Err(Error::SchemaMismatch(format!(
                "{} has schema_version {v}, this build reads version {SCHEMA_VERSION}",
                path.display()
            )));
        }
        Some(_) => {}
    }
    let report: EvaluationReport = serde_json::from_str(&text).map_err(ctx)?;
    report
        .validate()
        .map_err(|detail| Error::Report { path: path.to_path_buf(), detail })?;
    Ok(report)
}

fn csv_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn write_per_class_csv(errors: &[ClassError], path: &Path) -> Result<()> {
    let mut f = csv_file(path)?;
    writeln!(f, "class_id,error")?;
    for c in errors {
        writeln!(f, "{},{}", c.class_id, c.error)?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_corruption_grid_csv(grid: &[GridCell], path: &Path) -> Result<()> {
    let mut f = csv_file(path)?;
    writeln!(f, "corruption,severity,error")?;
    for c in grid {
        writeln!(f, "{},{},{}", c.corruption, c.severity, c.error)?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_error_ratios_csv(ratios: &BTreeMap<String, f64>, path: &Path) -> Result<()> {
    let mut f = csv_file(path)?;
    writeln!(f, "factor,error_ratio")?;
    for (k, v) in ratios {
        writeln!(f, "{k},{v}")?;
    }
    f.flush()?;
    Ok(())
}

type Column = (&'static str, fn(&EvaluationReport) -> Option<f64>);

const COLUMNS: [Column; 9] = [
    ("Clean", |r| Some(r.clean_error)),
    ("mCE", |r| r.mce),
    ("PGD", |r| r.robust_error),
    ("Clean mean", |r| Some(r.class_mean)),
    ("Clean SD", |r| Some(r.class_sd)),
    ("ReaL mean", |r| r.multilabel_class_mean),
    ("ReaL SD", |r| r.multilabel_class_sd),
    ("PGD mean", |r| r.robust_class_mean),
    ("PGD SD", |r| r.robust_class_sd),
];

/// Error table (percentages) plus relative changes for every ordered pair
/// `(earlier, later)`; the first report is the baseline. Columns that no
/// report fills are dropped.
pub fn comparison_table(reports: &[(String, EvaluationReport)]) -> String {
    let cols: Vec<&Column> = COLUMNS
        .iter()
        .filter(|(_, get)| reports.iter().any(|(_, r)| get(r).is_some()))
        .collect();
    let name_w = reports
        .iter()
        .map(|(n, _)| n.len())
        .chain(reports.iter().flat_map(|(a, _)| reports.iter().map(move |(b, _)| a.len() + b.len() + 4)))
        .chain(["Model".len()])
        .max()
        .unwrap_or(5);
    let col_w = |h: &str| h.len().max(8);

    let mut out = String::new();
    let header = |out: &mut String, first: &str| {
        let _ = write!(out, "{first:<name_w$}");
        for (h, _) in &cols {
            let _ = write!(out, "  {h:>w$}", w = col_w(h));
        }
        out.push('\n');
    };
    header(&mut out, "Model");
    for (name, r) in reports {
        let _ = write!(out, "{name:<name_w$}");
        for (h, get) in &cols {
            let cell = get(r).map(|v| format!("{:.2}", v * 100.0)).unwrap_or_else(|| "-".into());
            let _ = write!(out, "  {cell:>w$}", w = col_w(h));
        }
        out.push('\n');
    }
    if reports.len() < 2 {
        return out;
    }
    out.push_str("\nRelative change (%; positive = lower error)\n");
    header(&mut out, "Pair");
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let (a, ra) = &reports[i];
            let (b, rb) = &reports[j];
            let _ = write!(out, "{:<name_w$}", format!("{a} -> {b}"));
            for (h, get) in &cols {
                let cell = match (get(ra), get(rb)) {
                    (Some(x), Some(y)) => relative_change(x, y).map(|c| c.to_string()).unwrap_or_else(|_| "n/a".into()),
                    _ => "-".into(),
                };
                let _ = write!(out, "  {cell:>w$}", w = col_w(h));
            }
            out.push('\n');
        }
    }
    out
}
