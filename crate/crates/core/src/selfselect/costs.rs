use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{ensure, Error, Result};
use crate::mathcore::{
    cross_entropy_unchecked, kl_divergence, linear_forward, softmax_unchecked, total_variation,
    LinearHead, ProbDist,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    #[default]
    Kl,
    Tvd,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Divergence::Kl => "kl",
            Divergence::Tvd => "tvd",
        })
    }
}

impl FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(Divergence::Kl),
            "tvd" => Ok(Divergence::Tvd),
            other => Err(Error::invalid(format!("unknown divergence {other:?}"))),
        }
    }
}

impl Divergence {
    fn between(self, p: &[f64], q: &[f64]) -> f64 {
        // Softmax outputs of finite logits are strictly positive unless they
        // underflow, in which case KL treats the ratio through ProbDist rules.
        let p = ProbDist::from_weights(p).expect("softmax output");
        let q = ProbDist::from_weights(q).expect("softmax output");
        match self {
            Divergence::Kl => kl_divergence(&p, &q).unwrap_or(f64::INFINITY),
            Divergence::Tvd => total_variation(&p, &q).expect("equal lengths"),
        }
    }
}

fn check_head(head: &LinearHead, ds: &EmbeddingDataset) -> Result<()> {
    ensure!(
        head.dim() == ds.dim() && head.num_classes() == ds.num_classes(),
        "head is {}x{}, dataset is {}x{}",
        head.num_classes(),
        head.dim(),
        ds.num_classes(),
        ds.dim()
    );
    Ok(())
}

/// Cross-entropy of each row's true label under `head`.
pub fn misclassification_cost(head: &LinearHead, ds: &EmbeddingDataset) -> Result<Vec<f64>> {
    check_head(head, ds)?;
    Ok((0..ds.len())
        .into_par_iter()
        .map(|i| {
            let logits = linear_forward(head, ds.row(i)).expect("checked shape");
            cross_entropy_unchecked(&logits, ds.class(i))
        })
        .collect())
}

/// Divergence between the softmax outputs of `f` and `g` on each row.
/// Labels are not read.
pub fn disagreement_cost(
    f: &LinearHead,
    g: &LinearHead,
    ds: &EmbeddingDataset,
    divergence: Divergence,
) -> Result<Vec<f64>> {
    check_head(f, ds)?;
    check_head(g, ds)?;
    Ok((0..ds.len())
        .into_par_iter()
        .map(|i| {
            let p = softmax_unchecked(&linear_forward(f, ds.row(i)).unwrap());
            let q = softmax_unchecked(&linear_forward(g, ds.row(i)).unwrap());
            divergence.between(&p, &q)
        })
        .collect())
}

/// Inverted dropout with an explicit keep mask.
pub fn apply_dropout_mask(embedding: &[f64], keep: &[bool], p: f64) -> Vec<f64> {
    let scale = 1.0 / (1.0 - p);
    embedding
        .iter()
        .zip(keep)
        .map(|(&v, &k)| if k { v * scale } else { 0.0 })
        .collect()
}

fn check_p(p: f64, passes: usize) -> Result<()> {
    ensure!(
        (0.0..1.0).contains(&p),
        "dropout probability must lie in [0, 1), got {p}"
    );
    ensure!(passes >= 1, "dropout needs at least one pass");
    Ok(())
}

fn dropout_forward_rng(
    head: &LinearHead,
    x: &[f64],
    p: f64,
    passes: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let k = head.num_classes();
    let mut acc = vec![0.0; k];
    let mut masked = vec![0.0; x.len()];
    let mut logits = vec![0.0; k];
    let scale = 1.0 / (1.0 - p);
    for _ in 0..passes {
        for (m, &v) in masked.iter_mut().zip(x) {
            *m = if rng.random::<f64>() < p {
                0.0
            } else {
                v * scale
            };
        }
        head.forward_into(&masked, &mut logits);
        for (a, l) in acc.iter_mut().zip(&logits) {
            *a += l;
        }
    }
    for a in &mut acc {
        *a /= passes as f64;
    }
    acc
}

fn row_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Logits averaged over `passes` inverted-dropout masks of the embedding.
/// `p = 0` is exactly [`linear_forward`].
pub fn dropout_forward(
    head: &LinearHead,
    embedding: &[f64],
    p: f64,
    passes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_p(p, passes)?;
    head.check_input(embedding)?;
    if p == 0.0 {
        return linear_forward(head, embedding);
    }
    Ok(dropout_forward_rng(
        head,
        embedding,
        p,
        passes,
        &mut row_rng(seed, 0),
    ))
}

/// Disagreement between `head` and its dropout-perturbed self. Row `i`
/// draws its masks from stream `i` of the seeded generator, so the result
/// does not depend on scheduling.
pub fn dropout_cost(
    head: &LinearHead,
    ds: &EmbeddingDataset,
    p: f64,
    passes: usize,
    seed: u64,
    divergence: Divergence,
) -> Result<Vec<f64>> {
    check_p(p, passes)?;
    check_head(head, ds)?;
    Ok((0..ds.len())
        .into_par_iter()
        .map(|i| {
            let x = ds.row(i);
            let clean = softmax_unchecked(&linear_forward(head, x).unwrap());
            let noisy = if p == 0.0 {
                clean.clone()
            } else {
                softmax_unchecked(&dropout_forward_rng(
                    head,
                    x,
                    p,
                    passes,
                    &mut row_rng(seed, i as u64),
                ))
            };
            divergence.between(&clean, &noisy)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected rows, highest cost first.
    pub indices: Vec<usize>,
    /// Cost of each selected row, non-increasing.
    pub costs: Vec<f64>,
    pub worst_group: Option<usize>,
    /// Share of selected rows from the worst group, when groups are known.
    pub worst_group_fraction: Option<f64>,
    /// Share of the scored set from the worst group.
    pub worst_group_base_rate: Option<f64>,
    pub annotations_requested: usize,
}

/// Indices of the `n` largest costs, ties broken by lower index. Since the
/// subset objective is a sum of per-row costs, this is its exact maximizer.
pub fn select_top_n(costs: &[f64], n: usize) -> Result<SelectionResult> {
    ensure!(
        n <= costs.len(),
        "cannot select {n} rows from {} scored rows",
        costs.len()
    );
    ensure!(
        costs.iter().all(|c| !c.is_nan()),
        "cost vector contains NaN"
    );
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[b].total_cmp(&costs[a]).then(a.cmp(&b)));
    order.truncate(n);
    Ok(SelectionResult {
        costs: order.iter().map(|&i| costs[i]).collect(),
        indices: order,
        worst_group: None,
        worst_group_fraction: None,
        worst_group_base_rate: None,
        annotations_requested: 0,
    })
}
