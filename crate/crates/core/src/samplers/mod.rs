//! Class- and group-balanced minibatch streams and balanced subsets.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{group_id, group_parts, EmbeddingDataset};
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceMode {
    /// Seeded shuffle-and-chunk epochs over all rows.
    Unbalanced,
    /// Draw a class uniformly, then a row uniformly within it.
    ClassSampling,
    /// Draw a (class, spurious) group uniformly, then a row within it.
    GroupSampling,
    /// Draw a spurious value uniformly, then a row within it.
    SpuriousSampling,
    /// Epochs over a class-balanced subset.
    ClassSubset,
    /// Epochs over a group-balanced subset.
    GroupSubset,
}

impl BalanceMode {
    pub fn needs_spurious(self) -> bool {
        matches!(
            self,
            BalanceMode::GroupSampling | BalanceMode::SpuriousSampling | BalanceMode::GroupSubset
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BalanceMode::Unbalanced => "unbalanced",
            BalanceMode::ClassSampling => "class-sampling",
            BalanceMode::GroupSampling => "group-sampling",
            BalanceMode::SpuriousSampling => "spurious-sampling",
            BalanceMode::ClassSubset => "class-subset",
            BalanceMode::GroupSubset => "group-subset",
        }
    }
}

impl fmt::Display for BalanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BalanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "unbalanced" | "none" => BalanceMode::Unbalanced,
            "class-sampling" => BalanceMode::ClassSampling,
            "group-sampling" => BalanceMode::GroupSampling,
            "spurious-sampling" => BalanceMode::SpuriousSampling,
            "class-subset" => BalanceMode::ClassSubset,
            "group-subset" => BalanceMode::GroupSubset,
            other => return Err(Error::invalid(format!("unknown balance mode {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stratum {
    Class,
    Group,
}

impl Stratum {
    fn name(self) -> &'static str {
        match self {
            Stratum::Class => "class",
            Stratum::Group => "group",
        }
    }
}

fn strata(ds: &EmbeddingDataset, by: Stratum) -> Result<Vec<Vec<usize>>> {
    let strata = match by {
        Stratum::Class => ds.class_strata(),
        Stratum::Group => ds.group_strata()?,
    };
    check_nonempty(&strata, by.name())?;
    Ok(strata)
}

fn check_nonempty(strata: &[Vec<usize>], kind: &'static str) -> Result<()> {
    match strata.iter().position(Vec::is_empty) {
        Some(stratum) => Err(Error::DegenerateStratum { kind, stratum }),
        None => Ok(()),
    }
}

enum Source {
    Strata(Vec<Vec<usize>>),
    Epochs {
        pool: Vec<usize>,
        order: Vec<usize>,
        pos: usize,
    },
}

/// Infinite iterator of index batches.
pub struct BatchStream {
    source: Source,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let batch = match &mut self.source {
            Source::Strata(strata) => (0..self.batch_size)
                .map(|_| {
                    let s = &strata[self.rng.random_range(0..strata.len())];
                    s[self.rng.random_range(0..s.len())]
                })
                .collect(),
            Source::Epochs { pool, order, pos } => {
                if *pos >= order.len() {
                    *order = pool.clone();
                    order.shuffle(&mut self.rng);
                    *pos = 0;
                }
                let end = (*pos + self.batch_size).min(order.len());
                let batch = order[*pos..end].to_vec();
                *pos = end;
                batch
            }
        };
        Some(batch)
    }
}

pub fn balanced_batch_stream(
    ds: &EmbeddingDataset,
    mode: BalanceMode,
    batch_size: usize,
    seed: u64,
) -> Result<BatchStream> {
    ensure!(batch_size >= 1, "batch size must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epochs = |pool: Vec<usize>| Source::Epochs {
        pool,
        order: Vec::new(),
        pos: 0,
    };
    let source = match mode {
        BalanceMode::Unbalanced => epochs((0..ds.len()).collect()),
        BalanceMode::ClassSampling => Source::Strata(strata(ds, Stratum::Class)?),
        BalanceMode::GroupSampling => Source::Strata(strata(ds, Stratum::Group)?),
        BalanceMode::SpuriousSampling => {
            let s = ds.spurious_strata()?;
            check_nonempty(&s, "spurious value")?;
            Source::Strata(s)
        }
        BalanceMode::ClassSubset => epochs(subset_with(ds, Stratum::Class, &mut rng)?),
        BalanceMode::GroupSubset => epochs(subset_with(ds, Stratum::Group, &mut rng)?),
    };
    Ok(BatchStream {
        source,
        batch_size,
        rng,
    })
}

/// Keeps every row of the smallest stratum and downsamples the others to
/// that size. Result is sorted.
pub fn balanced_subset(ds: &EmbeddingDataset, by: Stratum, seed: u64) -> Result<Vec<usize>> {
    subset_with(ds, by, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn subset_with(ds: &EmbeddingDataset, by: Stratum, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let mut strata = strata(ds, by)?;
    let min = strata.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::with_capacity(min * strata.len());
    for s in &mut strata {
        let (chosen, _) = s.partial_shuffle(rng, min);
        out.extend_from_slice(chosen);
    }
    out.sort_unstable();
    Ok(out)
}

/// Worst-group share ablation over a group-balanced base subset.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub worst_groups: Vec<usize>,
    /// Share of each worst group's base rows that is kept, in `[0, 1]`.
    pub fraction: f64,
    pub seed: u64,
    /// Per-group base size. `None` uses the minimum of the worst-group
    /// sizes and half of every other group's size.
    pub base_size: Option<usize>,
}

impl AblationSpec {
    pub fn new(worst_groups: Vec<usize>, fraction: f64, seed: u64) -> Self {
        AblationSpec {
            worst_groups,
            fraction,
            seed,
            base_size: None,
        }
    }
}

/// Base per-group size: min over worst groups of their size and over the
/// other groups of half their size.
pub fn ablation_base_size(group_sizes: &[usize], worst_groups: &[usize]) -> usize {
    group_sizes
        .iter()
        .enumerate()
        .map(|(g, &n)| if worst_groups.contains(&g) { n } else { n / 2 })
        .min()
        .unwrap_or(0)
}

/// Group-balanced base where each worst group keeps `round(fraction * base)`
/// rows and the shortfall is filled from the same class with the other
/// spurious value. Total size is `base * num_groups` for every fraction.
pub fn ablation_subset(ds: &EmbeddingDataset, spec: &AblationSpec) -> Result<Vec<usize>> {
    ensure!(
        !spec.worst_groups.is_empty(),
        "ablation needs at least one worst group"
    );
    ensure!(
        (0.0..=1.0).contains(&spec.fraction),
        "ablation fraction must lie in [0, 1], got {}",
        spec.fraction
    );
    ensure!(
        ds.num_spurious() == 2,
        "ablation needs a binary spurious attribute, found {} values",
        ds.num_spurious()
    );
    let mut strata = strata(ds, Stratum::Group)?;
    let ns = ds.num_spurious();
    for &w in &spec.worst_groups {
        ensure!(w < strata.len(), "worst group {w} out of range");
        let (y, s) = group_parts(w, ns);
        let complement = group_id(y, 1 - s, ns);
        ensure!(
            !spec.worst_groups.contains(&complement),
            "worst group {w} and its complement {complement} are both marked worst"
        );
    }
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let base = spec
        .base_size
        .unwrap_or_else(|| ablation_base_size(&sizes, &spec.worst_groups));
    ensure!(base >= 1, "ablation base size is zero");

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for s in &mut strata {
        s.shuffle(&mut rng);
    }
    let mut take = vec![base; strata.len()];
    for &w in &spec.worst_groups {
        let kept = (spec.fraction * base as f64).round() as usize;
        let (y, s) = group_parts(w, ns);
        take[w] = kept;
        take[group_id(y, 1 - s, ns)] += base - kept;
    }
    let mut out = Vec::with_capacity(base * strata.len());
    for (g, (rows, &need)) in strata.iter().zip(&take).enumerate() {
        if need > rows.len() {
            return Err(Error::PoolExhausted {
                group: g,
                needed: need,
                available: rows.len(),
            });
        }
        out.extend_from_slice(&rows[..need]);
    }
    out.sort_unstable();
    Ok(out)
}
