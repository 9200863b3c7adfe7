use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::costs::{
    disagreement_cost, dropout_cost, misclassification_cost, select_top_n, Divergence,
    SelectionResult,
};
use crate::dataset::{AnnotationKind, AnnotationLedger, EmbeddingDataset};
use crate::error::{ensure, Result};
use crate::evalreport::evaluate;
use crate::mathcore::{LinearHead, OptimConfig};
use crate::trainer::{finetune_head, TrainReport};

pub const DEFAULT_SELECTION_SIZES: [usize; 3] = [20, 100, 500];
pub const DEFAULT_ES_FRACTIONS: [f64; 3] = [0.1, 0.2, 0.5];
pub const DEFAULT_DROPOUT_PS: [f64; 3] = [0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum SelfVariant {
    /// `n` uniformly random held-out rows.
    Random,
    /// Loss of the final ERM head against the true labels.
    Misclassification,
    /// Loss of the early-stopped checkpoint against the true labels.
    EsMisclassification { es_fraction: f64 },
    /// ERM head versus its own dropout inference on the last layer.
    DropoutDisagreement { p: f64, passes: usize },
    /// ERM head versus the early-stopped checkpoint.
    EsDisagreement { es_fraction: f64 },
}

impl SelfVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SelfVariant::Random => "random",
            SelfVariant::Misclassification => "misclassification",
            SelfVariant::EsMisclassification { .. } => "es-misclassification",
            SelfVariant::DropoutDisagreement { .. } => "dropout-disagreement",
            SelfVariant::EsDisagreement { .. } => "es-disagreement",
        }
    }

    /// Whether the variant reads the label of every scored row.
    pub fn scores_with_labels(&self) -> bool {
        matches!(
            self,
            SelfVariant::Misclassification | SelfVariant::EsMisclassification { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SelfVariant::EsMisclassification { es_fraction }
            | SelfVariant::EsDisagreement { es_fraction } => {
                ensure!(
                    es_fraction > 0.0 && es_fraction < 1.0,
                    "early-stop fraction must lie in (0, 1), got {es_fraction}"
                );
            }
            SelfVariant::DropoutDisagreement { p, passes } => {
                ensure!(
                    p > 0.0 && p < 1.0,
                    "dropout probability must lie in (0, 1), got {p}"
                );
                ensure!(passes >= 1, "dropout needs at least one pass");
            }
            SelfVariant::Random | SelfVariant::Misclassification => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfConfig {
    pub variant: SelfVariant,
    /// Reweighting set size.
    pub n: usize,
    pub divergence: Divergence,
    /// Seeds the random variant and dropout masks.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfOutcome {
    pub head: LinearHead,
    pub selection: SelectionResult,
}

fn score(
    erm: &TrainReport,
    heldout: &EmbeddingDataset,
    cfg: &SelfConfig,
) -> Result<Option<Vec<f64>>> {
    Ok(Some(match cfg.variant {
        SelfVariant::Random => return Ok(None),
        SelfVariant::Misclassification => misclassification_cost(&erm.head, heldout)?,
        SelfVariant::EsMisclassification { es_fraction } => {
            misclassification_cost(erm.checkpoint(es_fraction)?, heldout)?
        }
        SelfVariant::DropoutDisagreement { p, passes } => {
            dropout_cost(&erm.head, heldout, p, passes, cfg.seed, cfg.divergence)?
        }
        SelfVariant::EsDisagreement { es_fraction } => disagreement_cost(
            &erm.head,
            erm.checkpoint(es_fraction)?,
            heldout,
            cfg.divergence,
        )?,
    }))
}

/// Builds the reweighting set from `heldout` and finetunes the ERM head on
/// it with class-balanced sampling.
///
/// Class labels are revealed for the selected rows only, except under the
/// misclassification variants, which read every held-out label. Group
/// labels, when present, are used solely to report the worst-group share
/// of the selection.
pub fn run_self(
    erm: &TrainReport,
    heldout: &EmbeddingDataset,
    cfg: &SelfConfig,
    finetune_config: &OptimConfig,
    ledger: &mut AnnotationLedger,
) -> Result<SelfOutcome> {
    cfg.variant.validate()?;
    ensure!(cfg.n >= 1, "reweighting set size must be positive");
    ensure!(
        ledger.rows() == heldout.len(),
        "ledger tracks {} rows, held-out set has {}",
        ledger.rows(),
        heldout.len()
    );
    let mut selection = match score(erm, heldout, cfg)? {
        Some(costs) => select_top_n(&costs, cfg.n)?,
        None => {
            ensure!(
                cfg.n <= heldout.len(),
                "cannot select {} rows from {}",
                cfg.n,
                heldout.len()
            );
            let mut idx = rand::seq::index::sample(
                &mut ChaCha8Rng::seed_from_u64(cfg.seed),
                heldout.len(),
                cfg.n,
            )
            .into_vec();
            idx.sort_unstable();
            let n = idx.len();
            SelectionResult {
                indices: idx,
                costs: vec![0.0; n],
                worst_group: None,
                worst_group_fraction: None,
                worst_group_base_rate: None,
                annotations_requested: 0,
            }
        }
    };

    let before = ledger.revealed_class_labels();
    if cfg.variant.scores_with_labels() {
        ledger.reveal_all(AnnotationKind::Class);
    } else {
        ledger.reveal(&selection.indices, AnnotationKind::Class)?;
    }
    selection.annotations_requested = ledger.revealed_class_labels() - before;

    if heldout.has_spurious() {
        let metrics = evaluate(&erm.head, heldout)?;
        if let Some(worst) = metrics.worst_group() {
            let hits = selection
                .indices
                .iter()
                .filter(|&&i| heldout.group(i) == Some(worst))
                .count();
            selection.worst_group = Some(worst);
            selection.worst_group_fraction = Some(hits as f64 / selection.indices.len() as f64);
            selection.worst_group_base_rate =
                Some(metrics.counts[&worst] as f64 / heldout.len() as f64);
        }
    }

    let reweight = heldout.subset(&selection.indices)?;
    let head = finetune_head(&erm.head, &reweight, finetune_config)?;
    Ok(SelfOutcome { head, selection })
}

/// Audit dump: `index,cost,class[,group]`, one line per selected row.
pub fn selection_to_csv(selection: &SelectionResult, heldout: &EmbeddingDataset) -> String {
    let grouped = heldout.has_spurious();
    let mut out = String::from(if grouped {
        "index,cost,class,group\n"
    } else {
        "index,cost,class\n"
    });
    for (&i, &c) in selection.indices.iter().zip(&selection.costs) {
        let _ = write!(
            out,
            "{i},{},{}",
            crate::evalreport::round_sig6(c),
            heldout.class(i)
        );
        if let Some(g) = heldout.group(i) {
            let _ = write!(out, ",{g}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::BalanceMode;
    use crate::synthlab::{generate_synthetic, SyntheticSpec};
    use crate::trainer::train_head;

    fn setup() -> (TrainReport, EmbeddingDataset) {
        let spec = SyntheticSpec {
            n: 600,
            d: 4,
            minority_rate: 0.1,
            seed: 5,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let train = ds.subset(&(0..400).collect::<Vec<_>>()).unwrap();
        let heldout = ds.subset(&(400..600).collect::<Vec<_>>()).unwrap();
        let cfg = OptimConfig::default().with_steps(200).with_lr(0.05);
        let erm = train_head(
            &train,
            BalanceMode::Unbalanced,
            &cfg,
            None,
            &DEFAULT_ES_FRACTIONS,
        )
        .unwrap();
        (erm, heldout)
    }

    fn config(variant: SelfVariant, n: usize) -> SelfConfig {
        SelfConfig {
            variant,
            n,
            divergence: Divergence::Kl,
            seed: 11,
        }
    }

    fn finetune() -> OptimConfig {
        OptimConfig::default().with_steps(20).with_lr(0.01)
    }

    #[test]
    fn disagreement_reveals_only_selected_labels() {
        let (erm, heldout) = setup();
        let mut ledger = AnnotationLedger::new(heldout.len());
        let out = run_self(
            &erm,
            &heldout,
            &config(SelfVariant::EsDisagreement { es_fraction: 0.1 }, 20),
            &finetune(),
            &mut ledger,
        )
        .unwrap();
        assert_eq!(out.selection.indices.len(), 20);
        assert_eq!(out.selection.annotations_requested, 20);
        assert_eq!(ledger.revealed_class_labels(), 20);
        assert_eq!(ledger.revealed_group_labels(), 0);
        assert!(out.selection.worst_group_fraction.is_some());
    }

    #[test]
    fn misclassification_reads_every_label() {
        let (erm, heldout) = setup();
        let mut ledger = AnnotationLedger::new(heldout.len());
        let out = run_self(
            &erm,
            &heldout,
            &config(SelfVariant::Misclassification, 20),
            &finetune(),
            &mut ledger,
        )
        .unwrap();
        assert_eq!(out.selection.annotations_requested, heldout.len());
    }

    #[test]
    fn random_selection_is_seeded_and_sorted() {
        let (erm, heldout) = setup();
        let run = || {
            let mut ledger = AnnotationLedger::new(heldout.len());
            run_self(
                &erm,
                &heldout,
                &config(SelfVariant::Random, 50),
                &finetune(),
                &mut ledger,
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.selection.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_finetune_steps_keep_the_erm_head() {
        let (erm, heldout) = setup();
        let mut ledger = AnnotationLedger::new(heldout.len());
        let out = run_self(
            &erm,
            &heldout,
            &config(SelfVariant::DropoutDisagreement { p: 0.5, passes: 1 }, 40),
            &OptimConfig::default().with_steps(0),
            &mut ledger,
        )
        .unwrap();
        assert_eq!(out.head, erm.head);
    }

    #[test]
    fn bad_requests_are_rejected() {
        let (erm, heldout) = setup();
        let mut ledger = AnnotationLedger::new(heldout.len());
        let too_many = config(SelfVariant::Random, heldout.len() + 1);
        assert!(run_self(&erm, &heldout, &too_many, &finetune(), &mut ledger).is_err());
        let missing_checkpoint = config(SelfVariant::EsDisagreement { es_fraction: 0.3 }, 10);
        assert!(run_self(
            &erm,
            &heldout,
            &missing_checkpoint,
            &finetune(),
            &mut ledger
        )
        .is_err());
        let bad_p = config(SelfVariant::DropoutDisagreement { p: 1.0, passes: 1 }, 10);
        assert!(run_self(&erm, &heldout, &bad_p, &finetune(), &mut ledger).is_err());
    }

    #[test]
    fn csv_has_one_line_per_selected_row() {
        let (erm, heldout) = setup();
        let mut ledger = AnnotationLedger::new(heldout.len());
        let out = run_self(
            &erm,
            &heldout,
            &config(SelfVariant::Misclassification, 5),
            &finetune(),
            &mut ledger,
        )
        .unwrap();
        let csv = selection_to_csv(&out.selection, &heldout);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("index,cost,class,group\n"));
    }
}
