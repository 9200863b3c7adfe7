use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Class,
    Group,
}

/// Which labels of one dataset a method has looked at. Revealing an index
/// twice counts once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationLedger {
    rows: usize,
    class: BTreeSet<usize>,
    group: BTreeSet<usize>,
}

/// Totals that can be summed across ledgers of different datasets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationCounts {
    pub class: usize,
    pub group: usize,
}

impl std::ops::Add for AnnotationCounts {
    type Output = AnnotationCounts;

    fn add(self, rhs: Self) -> Self {
        AnnotationCounts {
            class: self.class + rhs.class,
            group: self.group + rhs.group,
        }
    }
}

impl std::iter::Sum for AnnotationCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(AnnotationCounts::default(), |a, b| a + b)
    }
}

impl AnnotationLedger {
    pub fn new(rows: usize) -> Self {
        AnnotationLedger {
            rows,
            class: BTreeSet::new(),
            group: BTreeSet::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn revealed_class_labels(&self) -> usize {
        self.class.len()
    }

    pub fn revealed_group_labels(&self) -> usize {
        self.group.len()
    }

    pub fn counts(&self) -> AnnotationCounts {
        AnnotationCounts {
            class: self.class.len(),
            group: self.group.len(),
        }
    }

    /// Marks `indices` as revealed and returns how many were new. Nothing is
    /// recorded if any index is out of bounds.
    pub fn reveal(&mut self, indices: &[usize], kind: AnnotationKind) -> Result<usize> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.rows) {
            return Err(Error::invalid(format!(
                "annotation index {bad} out of bounds for {} rows",
                self.rows
            )));
        }
        let set = match kind {
            AnnotationKind::Class => &mut self.class,
            AnnotationKind::Group => &mut self.group,
        };
        let before = set.len();
        set.extend(indices.iter().copied());
        Ok(set.len() - before)
    }

    pub fn reveal_all(&mut self, kind: AnnotationKind) {
        let all: Vec<usize> = (0..self.rows).collect();
        self.reveal(&all, kind).expect("indices in range");
    }
}

/// Functional form of [`AnnotationLedger::reveal`].
pub fn reveal_labels(
    ledger: &AnnotationLedger,
    indices: &[usize],
    kind: AnnotationKind,
) -> Result<AnnotationLedger> {
    let mut next = ledger.clone();
    next.reveal(indices, kind)?;
    Ok(next)
}
