use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationKind, AnnotationLedger, EmbeddingDataset};
use crate::error::{ensure, Result};
use crate::mathcore::LinearHead;

/// Per-group and overall accuracy of a head on one dataset.
///
/// Correct/total counts are kept exactly; accuracies are their quotients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub per_group_accuracy: BTreeMap<usize, f64>,
    pub counts: BTreeMap<usize, usize>,
    pub correct: BTreeMap<usize, usize>,
    /// Minimum over non-empty groups; `None` without spurious labels.
    pub worst_group_accuracy: Option<f64>,
    pub average_accuracy: f64,
    pub total: usize,
    pub total_correct: usize,
    /// Declared groups with no rows in the evaluated data.
    pub omitted_groups: Vec<usize>,
}

impl GroupMetrics {
    /// Group with the lowest accuracy, ties to the lowest id.
    pub fn worst_group(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (&g, &acc) in &self.per_group_accuracy {
            if best.is_none_or(|(_, b)| acc < b) {
                best = Some((g, acc));
            }
        }
        best.map(|(g, _)| g)
    }

    pub fn max_group_accuracy(&self) -> Option<f64> {
        self.per_group_accuracy.values().copied().reduce(f64::max)
    }
}

/// Argmax predictions (ties to the lowest class id) scored per group.
pub fn evaluate(head: &LinearHead, ds: &EmbeddingDataset) -> Result<GroupMetrics> {
    ensure!(!ds.is_empty(), "cannot evaluate on an empty dataset");
    ensure!(
        head.dim() == ds.dim() && head.num_classes() == ds.num_classes(),
        "head is {}x{}, dataset is {}x{}",
        head.num_classes(),
        head.dim(),
        ds.num_classes(),
        ds.dim()
    );
    let mut counts = BTreeMap::new();
    let mut correct = BTreeMap::new();
    let mut total_correct = 0;
    for i in 0..ds.len() {
        let hit = head.predict(ds.row(i)) == ds.class(i);
        total_correct += hit as usize;
        if let Some(g) = ds.group(i) {
            *counts.entry(g).or_insert(0usize) += 1;
            *correct.entry(g).or_insert(0usize) += hit as usize;
        }
    }
    let per_group_accuracy: BTreeMap<usize, f64> = counts
        .iter()
        .map(|(&g, &n)| (g, correct[&g] as f64 / n as f64))
        .collect();
    let worst_group_accuracy = per_group_accuracy.values().copied().reduce(f64::min);
    let omitted_groups = (0..ds.num_groups())
        .filter(|g| !counts.contains_key(g))
        .collect();
    Ok(GroupMetrics {
        per_group_accuracy,
        counts,
        correct,
        worst_group_accuracy,
        average_accuracy: total_correct as f64 / ds.len() as f64,
        total: ds.len(),
        total_correct,
        omitted_groups,
    })
}

/// Index of the candidate with the highest worst-group accuracy on `val`
/// (ties to the earliest), plus its metrics. Reveals every group label of
/// `val`.
pub fn model_select<C>(
    candidates: &[(LinearHead, C)],
    val: &EmbeddingDataset,
    ledger: &mut AnnotationLedger,
) -> Result<(usize, GroupMetrics)> {
    ensure!(
        !candidates.is_empty(),
        "model selection needs at least one candidate"
    );
    ensure!(
        ledger.rows() == val.len(),
        "ledger does not track the validation set"
    );
    val.require_spurious()?;
    let mut best: Option<(usize, GroupMetrics)> = None;
    for (i, (head, _)) in candidates.iter().enumerate() {
        let m = evaluate(head, val)?;
        let score = m.worst_group_accuracy.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((_, b)) => score > b.worst_group_accuracy.unwrap_or(f64::NEG_INFINITY),
        };
        if better {
            best = Some((i, m));
        }
    }
    ledger.reveal_all(AnnotationKind::Class);
    ledger.reveal_all(AnnotationKind::Group);
    Ok(best.unwrap())
}
