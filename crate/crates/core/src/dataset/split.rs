use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EmbeddingDataset;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: Vec<f64>, seed: u64) -> Result<Self> {
        let spec = SplitSpec { fractions, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Two-way split keeping `1 - holdout` in the first part.
    pub fn holdout(holdout: f64, seed: u64) -> Result<Self> {
        ensure!(
            holdout > 0.0 && holdout < 1.0,
            "holdout fraction must lie in (0, 1), got {holdout}"
        );
        SplitSpec::new(vec![1.0 - holdout, holdout], seed)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.fractions.is_empty(),
            "split needs at least one fraction"
        );
        ensure!(
            self.fractions.iter().all(|f| *f > 0.0 && *f < 1.0) || self.fractions == [1.0],
            "split fractions must lie in (0, 1)"
        );
        let total: f64 = self.fractions.iter().sum();
        ensure!(
            (total - 1.0).abs() <= 1e-9,
            "split fractions sum to {total}, not 1"
        );
        Ok(())
    }

    /// Part sizes: `floor(f_i * n)` with the remainder added to part 0.
    pub fn sizes(&self, n: usize) -> Vec<usize> {
        let mut sizes: Vec<usize> = self
            .fractions
            .iter()
            .map(|f| (f * n as f64).floor() as usize)
            .collect();
        let assigned: usize = sizes.iter().sum();
        sizes[0] += n.saturating_sub(assigned);
        sizes
    }
}

/// Seeded shuffle of `0..n` cut into contiguous parts.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let sizes = spec.sizes(n);
    if let Some(part) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::DegenerateSplit {
            part,
            parts: sizes.len(),
            n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        parts.push(order[start..start + s].to_vec());
        start += s;
    }
    Ok(parts)
}

pub fn split(ds: &EmbeddingDataset, spec: &SplitSpec) -> Result<Vec<EmbeddingDataset>> {
    split_indices(ds.len(), spec)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect()
}
