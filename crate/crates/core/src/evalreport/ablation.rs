use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, report::round_sig6};
use crate::dataset::{AnnotationLedger, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::mathcore::OptimConfig;
use crate::samplers::{ablation_subset, AblationSpec};
use crate::trainer::{cb_last_layer_retrain, TrainReport};

/// Worst-group shares swept by default.
pub const DEFAULT_ABLATION_FRACTIONS: [f64; 10] = [
    0.025, 0.05, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fraction: f64,
    pub subset_size: Option<usize>,
    pub wga: Option<f64>,
    pub average: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub worst_groups: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,subset_size,wga,avg,error\n");
        let opt = |v: Option<f64>| v.map(|x| round_sig6(x).to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                round_sig6(r.fraction),
                r.subset_size.map(|s| s.to_string()).unwrap_or_default(),
                opt(r.wga),
                opt(r.average),
                r.error.as_deref().unwrap_or("").replace(',', ";")
            );
        }
        out
    }

    pub fn wga_at(&self, fraction: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.fraction - fraction).abs() < 1e-12)
            .and_then(|r| r.wga)
    }
}

/// Worst group of the ERM head: taken from the last validation point when
/// one was recorded, otherwise measured on `heldout`.
pub fn erm_worst_group(erm: &TrainReport, heldout: &EmbeddingDataset) -> Result<usize> {
    let metrics = match erm.validation_trace.last() {
        Some(p) => p.metrics.clone(),
        None => evaluate(&erm.head, heldout)?,
    };
    metrics
        .worst_group()
        .ok_or(Error::MissingAnnotation("spurious"))
}

/// Sweeps the worst-group share of a constant-size reweighting set,
/// retraining class-balanced at each share and scoring on `eval`. A share
/// whose subset cannot be built is recorded as an error row.
pub fn run_wg_ablation(
    erm: &TrainReport,
    heldout: &EmbeddingDataset,
    eval: &EmbeddingDataset,
    fractions: &[f64],
    config: &OptimConfig,
    worst_groups: Option<Vec<usize>>,
) -> Result<AblationTable> {
    heldout.require_spurious()?;
    let worst_groups = match worst_groups {
        Some(w) => w,
        None => vec![erm_worst_group(erm, heldout)?],
    };
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let spec = AblationSpec::new(worst_groups.clone(), fraction, config.seed);
        let attempt = ablation_subset(heldout, &spec).and_then(|idx| {
            let subset = heldout.subset(&idx)?;
            let mut ledger = AnnotationLedger::new(subset.len());
            let head = cb_last_layer_retrain(&subset, config, &mut ledger)?;
            Ok((idx.len(), evaluate(&head, eval)?))
        });
        rows.push(match attempt {
            Ok((size, m)) => AblationRow {
                fraction,
                subset_size: Some(size),
                wga: m.worst_group_accuracy,
                average: Some(m.average_accuracy),
                error: None,
            },
            Err(e) => AblationRow {
                fraction,
                subset_size: None,
                wga: None,
                average: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(AblationTable { worst_groups, rows })
}
