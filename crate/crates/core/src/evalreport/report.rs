use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GroupMetrics;
use crate::dataset::AnnotationCounts;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "method,seed,group,accuracy,wga,avg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: GroupMetrics,
    pub annotations: AnnotationCounts,
    /// Method-specific scalars, e.g. the worst-group share of a selection.
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    pub wga_mean: Option<f64>,
    pub wga_std: Option<f64>,
    pub average_mean: f64,
    pub average_std: f64,
    /// Sum over seeds.
    pub annotations: AnnotationCounts,
    pub config: BTreeMap<String, String>,
}

/// Mean and sample (n - 1) standard deviation; the deviation is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ExperimentReport {
    /// Aggregates per-seed results; seeds are listed in the given order.
    pub fn new(
        method: impl Into<String>,
        per_seed: Vec<SeedResult>,
        config: BTreeMap<String, String>,
    ) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::invalid("experiment report needs at least one seed"));
        }
        let wgas: Option<Vec<f64>> = per_seed
            .iter()
            .map(|s| s.metrics.worst_group_accuracy)
            .collect();
        let (wga_mean, wga_std) = match wgas {
            Some(w) => {
                let (m, s) = mean_std(&w);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        let avgs: Vec<f64> = per_seed
            .iter()
            .map(|s| s.metrics.average_accuracy)
            .collect();
        let (average_mean, average_std) = mean_std(&avgs);
        Ok(ExperimentReport {
            method: method.into(),
            seeds: per_seed.iter().map(|s| s.seed).collect(),
            annotations: per_seed.iter().map(|s| s.annotations).sum(),
            per_seed,
            wga_mean,
            wga_std,
            average_mean,
            average_std,
            config,
        })
    }
}

/// Rounds to six significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap()
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_sig6(n.as_f64().unwrap());
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to six significant digits and keys
/// in sorted order.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut v =
        serde_json::to_value(value).map_err(|e| Error::invalid(format!("serialize: {e}")))?;
    round_floats(&mut v);
    let mut s =
        serde_json::to_string_pretty(&v).map_err(|e| Error::invalid(format!("serialize: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn fmt6(x: f64) -> String {
    format!("{}", round_sig6(x))
}

pub fn report_to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in &report.per_seed {
        let wga = s.metrics.worst_group_accuracy.map(fmt6).unwrap_or_default();
        let avg = fmt6(s.metrics.average_accuracy);
        if s.metrics.per_group_accuracy.is_empty() {
            let _ = writeln!(out, "{},{},all,{avg},{wga},{avg}", report.method, s.seed);
        }
        for (g, acc) in &s.metrics.per_group_accuracy {
            let _ = writeln!(
                out,
                "{},{},{g},{},{wga},{avg}",
                report.method,
                s.seed,
                fmt6(*acc)
            );
        }
    }
    out
}

pub fn emit_report(
    report: &ExperimentReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Json => to_json_string(report)?,
        ReportFormat::Csv => report_to_csv(report),
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}
