use super::train::train_head;
use crate::dataset::{
    split_indices, AnnotationKind, AnnotationLedger, EmbeddingDataset, SplitSpec,
};
use crate::error::{ensure, Error, Result};
use crate::mathcore::{LinearHead, OptimConfig};
use crate::samplers::BalanceMode;

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.05;

fn check_ledger(ledger: &AnnotationLedger, ds: &EmbeddingDataset) -> Result<()> {
    ensure!(
        ledger.rows() == ds.len(),
        "ledger tracks {} rows, dataset has {}",
        ledger.rows(),
        ds.len()
    );
    Ok(())
}

fn require_two_classes(ds: &EmbeddingDataset) -> Result<()> {
    if ds.num_classes() < 2 {
        return Err(Error::DegenerateStratum {
            kind: "class",
            stratum: 1,
        });
    }
    Ok(())
}

/// Fresh zero-initialized head trained on `heldout` under `mode`.
pub fn retrain(
    heldout: &EmbeddingDataset,
    mode: BalanceMode,
    config: &OptimConfig,
) -> Result<LinearHead> {
    Ok(train_head(heldout, mode, config, None, &[])?.head)
}

/// Group-balanced retraining of a fresh head on the reweighting set.
/// Reveals every class and group label of `heldout`.
pub fn dfr(
    heldout: &EmbeddingDataset,
    config: &OptimConfig,
    ledger: &mut AnnotationLedger,
) -> Result<LinearHead> {
    check_ledger(ledger, heldout)?;
    heldout.require_spurious()?;
    let head = retrain(heldout, BalanceMode::GroupSampling, config)?;
    ledger.reveal_all(AnnotationKind::Class);
    ledger.reveal_all(AnnotationKind::Group);
    Ok(head)
}

/// Class-balanced retraining of a fresh head. Reveals class labels only.
pub fn cb_last_layer_retrain(
    heldout: &EmbeddingDataset,
    config: &OptimConfig,
    ledger: &mut AnnotationLedger,
) -> Result<LinearHead> {
    check_ledger(ledger, heldout)?;
    require_two_classes(heldout)?;
    let head = retrain(heldout, BalanceMode::ClassSampling, config)?;
    ledger.reveal_all(AnnotationKind::Class);
    Ok(head)
}

/// Class-balanced continuation of training from `init`.
pub fn finetune_head(
    init: &LinearHead,
    reweight: &EmbeddingDataset,
    config: &OptimConfig,
) -> Result<LinearHead> {
    ensure!(
        init.num_classes() == reweight.num_classes() && init.dim() == reweight.dim(),
        "head is {}x{}, reweighting set needs {}x{}",
        init.num_classes(),
        init.dim(),
        reweight.num_classes(),
        reweight.dim()
    );
    if config.total_steps == 0 {
        return Ok(init.clone());
    }
    Ok(train_head(
        reweight,
        BalanceMode::ClassSampling,
        config,
        Some(init),
        &[],
    )?
    .head)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeLunch {
    pub erm_head: LinearHead,
    pub retrained_head: LinearHead,
    /// Row indices of the ERM part and the retraining part.
    pub erm_rows: Vec<usize>,
    pub holdout_rows: Vec<usize>,
}

/// Splits `ds`, trains ERM on the large part and retrains a fresh head on
/// the held-out part, both class-balanced. The split is seeded with
/// `erm_config.seed`.
pub fn free_lunch(
    ds: &EmbeddingDataset,
    erm_config: &OptimConfig,
    retrain_config: &OptimConfig,
    holdout_fraction: f64,
) -> Result<FreeLunch> {
    let spec = SplitSpec::holdout(holdout_fraction, erm_config.seed)?;
    let mut parts = split_indices(ds.len(), &spec)?;
    let holdout_rows = parts.pop().unwrap();
    let erm_rows = parts.pop().unwrap();
    let erm_part = ds.subset(&erm_rows)?;
    let holdout_part = ds.subset(&holdout_rows)?;
    require_two_classes(ds)?;
    let erm_head = retrain(&erm_part, BalanceMode::ClassSampling, erm_config)?;
    let retrained_head = retrain(&holdout_part, BalanceMode::ClassSampling, retrain_config)?;
    Ok(FreeLunch {
        erm_head,
        retrained_head,
        erm_rows,
        holdout_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::grouped;
    use crate::trainer::train::separable;

    fn cfg(steps: usize) -> OptimConfig {
        OptimConfig {
            total_steps: steps,
            lr0: 0.05,
            batch_size: 8,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn dfr_needs_every_group() {
        let ds = grouped(&[5, 0, 4, 4], 2);
        let mut ledger = AnnotationLedger::new(ds.len());
        assert!(matches!(
            dfr(&ds, &cfg(5), &mut ledger),
            Err(Error::DegenerateStratum {
                kind: "group",
                stratum: 1
            })
        ));
        assert_eq!(ledger.revealed_group_labels(), 0);
        let no_groups = grouped(&[3, 3], 1).without_spurious();
        let mut ledger = AnnotationLedger::new(6);
        assert!(matches!(
            dfr(&no_groups, &cfg(5), &mut ledger),
            Err(Error::MissingAnnotation(_))
        ));
    }

    #[test]
    fn dfr_consumes_group_labels() {
        let ds = grouped(&[5, 2, 3, 4], 2);
        let mut ledger = AnnotationLedger::new(ds.len());
        dfr(&ds, &cfg(5), &mut ledger).unwrap();
        assert_eq!(ledger.counts().group, 14);
        assert_eq!(ledger.counts().class, 14);
    }

    #[test]
    fn cb_retrain_consumes_only_class_labels() {
        let ds = grouped(&[5, 2, 3, 4], 2);
        let mut ledger = AnnotationLedger::new(ds.len());
        cb_last_layer_retrain(&ds, &cfg(5), &mut ledger).unwrap();
        assert_eq!(ledger.counts().group, 0);
        assert_eq!(ledger.counts().class, 14);
        let single = grouped(&[4, 4, 0, 0], 2);
        let mut ledger = AnnotationLedger::new(8);
        assert!(matches!(
            cb_last_layer_retrain(&single, &cfg(5), &mut ledger),
            Err(Error::DegenerateStratum {
                kind: "class",
                stratum: 1
            })
        ));
    }

    #[test]
    fn finetune_zero_steps_is_identity() {
        let ds = separable(10);
        let init = LinearHead::from_parts(2, 2, vec![0.3, 0.1, -0.2, 0.7], vec![0.0, 0.5]).unwrap();
        assert_eq!(finetune_head(&init, &ds, &cfg(0)).unwrap(), init);
        assert!(finetune_head(&LinearHead::zeros(3, 2), &ds, &cfg(1)).is_err());
    }

    #[test]
    fn finetune_moves_little_with_tiny_lr() {
        let ds = separable(30);
        let init = train_head(&ds, BalanceMode::Unbalanced, &cfg(50), None, &[])
            .unwrap()
            .head;
        let config = cfg(20).with_lr(1e-6);
        let tuned = finetune_head(&init, &ds, &config).unwrap();
        // Per-sample gradient of cross entropy is bounded by 2 * (|x| + 1).
        let max_x = ds.features().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let grad_bound = 2.0 * (max_x + 1.0) * ((2 * 2 + 2) as f64).sqrt();
        let norm = init.distance(&LinearHead::zeros(2, 2));
        let bound = 1e-6 * 20.0 * (grad_bound + config.weight_decay * (norm + 1.0));
        assert!(tuned.distance(&init) <= bound);
        assert!(tuned.distance(&init) > 0.0);
    }

    #[test]
    fn free_lunch_split_sizes() {
        let ds = separable(1000);
        let out = free_lunch(&ds, &cfg(5), &cfg(5), 0.05).unwrap();
        assert_eq!((out.erm_rows.len(), out.holdout_rows.len()), (950, 50));
        assert!(free_lunch(&ds, &cfg(5), &cfg(5), 0.0).is_err());
    }

    #[test]
    fn free_lunch_missing_class_in_holdout() {
        // 999 rows of class 0 and 1 of class 1: a 5-row holdout rarely has it.
        let mut labels = vec![0u32; 100];
        labels[0] = 1;
        let ds = EmbeddingDataset::new(1, vec![1.0; 100], labels, None, 2, 0).unwrap();
        let spec = SplitSpec::holdout(0.05, 1).unwrap();
        let parts = split_indices(100, &spec).unwrap();
        assert!(!parts[1].contains(&0), "pick another seed for this test");
        assert!(matches!(
            free_lunch(&ds, &cfg(3).with_seed(1), &cfg(3), 0.05),
            Err(Error::DegenerateStratum { kind: "class", .. })
        ));
    }
}
