use std::collections::BTreeMap;

use crate::error::{ensure, Error, Result};

/// Frozen feature embeddings with class labels and optional spurious
/// attribute labels.
///
/// Group ids are derived as `class * num_spurious + spurious` and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    n: usize,
    dim: usize,
    features: Vec<f64>,
    class_labels: Vec<u32>,
    spurious_labels: Option<Vec<u32>>,
    num_classes: u32,
    num_spurious: u32,
}

impl EmbeddingDataset {
    /// `features` is row-major `n x dim`. Pass `num_spurious = 0` together
    /// with `spurious_labels = None` when the attribute is unannotated.
    pub fn new(
        dim: usize,
        features: Vec<f64>,
        class_labels: Vec<u32>,
        spurious_labels: Option<Vec<u32>>,
        num_classes: u32,
        num_spurious: u32,
    ) -> Result<Self> {
        let n = class_labels.len();
        ensure!(n >= 1, "dataset needs at least one row");
        ensure!(dim >= 1, "dataset needs at least one feature");
        ensure!(
            features.len() == n * dim,
            "feature matrix has {} entries, expected {n}x{dim}",
            features.len()
        );
        ensure!(num_classes >= 1, "num_classes must be at least 1");
        ensure!(
            features.iter().all(|v| v.is_finite()),
            "features must be finite"
        );
        if let Some(i) = class_labels.iter().position(|&c| c >= num_classes) {
            return Err(Error::invalid(format!(
                "row {i}: class label {} >= num_classes {num_classes}",
                class_labels[i]
            )));
        }
        match &spurious_labels {
            Some(s) => {
                ensure!(
                    num_spurious >= 1,
                    "spurious labels given but num_spurious = 0"
                );
                ensure!(s.len() == n, "{} spurious labels for {n} rows", s.len());
                if let Some(i) = s.iter().position(|&v| v >= num_spurious) {
                    return Err(Error::invalid(format!(
                        "row {i}: spurious label {} >= num_spurious {num_spurious}",
                        s[i]
                    )));
                }
            }
            None => ensure!(
                num_spurious == 0,
                "num_spurious = {num_spurious} but no spurious labels"
            ),
        }
        Ok(EmbeddingDataset {
            n,
            dim,
            features,
            class_labels,
            spurious_labels,
            num_classes,
            num_spurious,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes as usize
    }

    pub fn num_spurious(&self) -> usize {
        self.num_spurious as usize
    }

    pub fn has_spurious(&self) -> bool {
        self.spurious_labels.is_some()
    }

    /// `|classes| * |spurious values|`, or 0 without spurious labels.
    pub fn num_groups(&self) -> usize {
        self.num_classes() * self.num_spurious()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class(&self, i: usize) -> usize {
        self.class_labels[i] as usize
    }

    pub fn class_labels(&self) -> &[u32] {
        &self.class_labels
    }

    pub fn spurious_labels(&self) -> Option<&[u32]> {
        self.spurious_labels.as_deref()
    }

    pub fn spurious(&self, i: usize) -> Option<usize> {
        self.spurious_labels.as_ref().map(|s| s[i] as usize)
    }

    pub fn group(&self, i: usize) -> Option<usize> {
        self.spurious(i)
            .map(|s| group_id(self.class(i), s, self.num_spurious()))
    }

    pub(crate) fn require_spurious(&self) -> Result<&[u32]> {
        self.spurious_labels
            .as_deref()
            .ok_or(Error::MissingAnnotation("spurious"))
    }

    /// Group id of every row; fails without spurious labels.
    pub fn group_ids(&self) -> Result<Vec<usize>> {
        self.require_spurious()?;
        Ok((0..self.n).map(|i| self.group(i).unwrap()).collect())
    }

    /// New dataset holding the given rows in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        ensure!(!indices.is_empty(), "subset is empty");
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(Error::invalid(format!(
                "row index {bad} out of bounds for {} rows",
                self.n
            )));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Ok(EmbeddingDataset {
            n: indices.len(),
            dim: self.dim,
            features,
            class_labels: indices.iter().map(|&i| self.class_labels[i]).collect(),
            spurious_labels: self
                .spurious_labels
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            num_classes: self.num_classes,
            num_spurious: self.num_spurious,
        })
    }

    /// Copy with the spurious annotation removed.
    pub fn without_spurious(&self) -> Self {
        EmbeddingDataset {
            spurious_labels: None,
            num_spurious: 0,
            ..self.clone()
        }
    }

    /// Row indices per class, indexed by class id (empty classes included).
    pub fn class_strata(&self) -> Vec<Vec<usize>> {
        let mut strata = vec![Vec::new(); self.num_classes()];
        for i in 0..self.n {
            strata[self.class(i)].push(i);
        }
        strata
    }

    /// Row indices per group, indexed by group id (empty groups included).
    pub fn group_strata(&self) -> Result<Vec<Vec<usize>>> {
        self.require_spurious()?;
        let mut strata = vec![Vec::new(); self.num_groups()];
        for i in 0..self.n {
            strata[self.group(i).unwrap()].push(i);
        }
        Ok(strata)
    }

    /// Row indices per spurious value.
    pub fn spurious_strata(&self) -> Result<Vec<Vec<usize>>> {
        let labels = self.require_spurious()?;
        let mut strata = vec![Vec::new(); self.num_spurious()];
        for (i, &s) in labels.iter().enumerate() {
            strata[s as usize].push(i);
        }
        Ok(strata)
    }
}

pub fn group_id(class: usize, spurious: usize, num_spurious: usize) -> usize {
    class * num_spurious + spurious
}

/// Inverse of [`group_id`].
pub fn group_parts(group: usize, num_spurious: usize) -> (usize, usize) {
    (group / num_spurious, group % num_spurious)
}

/// Row count of every non-empty group.
pub fn group_counts(ds: &EmbeddingDataset) -> Result<BTreeMap<usize, usize>> {
    let mut counts = BTreeMap::new();
    for g in ds.group_ids()? {
        *counts.entry(g).or_insert(0) += 1;
    }
    Ok(counts)
}

#[cfg(test)]
pub(crate) use tests::grouped;
