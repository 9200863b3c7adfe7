use crate::error::{ensure, Error, Result};

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        ensure!(!probs.is_empty(), "probability vector is empty");
        ensure!(
            probs
                .iter()
                .all(|p| p.is_finite() && *p >= 0.0 && *p <= 1.0),
            "probability entries must lie in [0, 1]"
        );
        let mass: f64 = probs.iter().sum();
        ensure!(
            (mass - 1.0).abs() <= MASS_TOLERANCE,
            "probability mass {mass} differs from 1 by more than {MASS_TOLERANCE:e}"
        );
        Ok(ProbDist(probs))
    }

    /// Normalizes non-negative finite weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        ensure!(
            weights.iter().all(|w| w.is_finite() && *w >= 0.0),
            "weights must be finite and non-negative"
        );
        let total: f64 = weights.iter().sum();
        ensure!(total > 0.0, "weights sum to zero");
        ProbDist::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbDist> {
    ensure!(!logits.is_empty(), "softmax of an empty logit vector");
    ensure!(
        logits.iter().all(|z| z.is_finite()),
        "softmax input contains non-finite logits"
    );
    Ok(ProbDist(softmax_unchecked(logits)))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Log-sum-exp of the logits, computed stably.
pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// `-ln softmax(logits)[label]`, evaluated through log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    ensure!(
        label < logits.len(),
        "label {label} out of range for {} classes",
        logits.len()
    );
    ensure!(
        logits.iter().all(|z| z.is_finite()),
        "cross entropy input contains non-finite logits"
    );
    Ok(cross_entropy_unchecked(logits, label))
}

pub(crate) fn cross_entropy_unchecked(logits: &[f64], label: usize) -> f64 {
    // Rounding can push a saturated loss a hair below zero.
    (log_sum_exp(logits) - logits[label]).max(0.0)
}

/// Kullback-Leibler divergence `KL(p || q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    ensure!(
        p.len() == q.len(),
        "distribution lengths differ: {} vs {}",
        p.len(),
        q.len()
    );
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.0.iter().zip(&q.0).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::invalid(format!(
                "q[{i}] = 0 where p[{i}] = {pi} > 0; divergence is infinite"
            )));
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total.max(0.0))
}

/// Total variation distance, half the L1 distance.
pub fn total_variation(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    ensure!(
        p.len() == q.len(),
        "distribution lengths differ: {} vs {}",
        p.len(),
        q.len()
    );
    let l1: f64 = p.0.iter().zip(&q.0).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * l1).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap().probs(), &[0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p.probs()[0] - 1.0).abs() < 1e-15);
        assert!(p.probs()[1] >= 0.0 && p.probs()[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = 2f64.ln();
        assert!((cross_entropy(&[0.0, 0.0], 0).unwrap() - ln2).abs() < 1e-15);
        assert!((cross_entropy(&[ln2, 0.0], 0).unwrap() - 1.5f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[50.0, 0.0], 0).unwrap() < 1e-20);
        assert!(matches!(
            cross_entropy(&[0.0, 0.0], 2),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn kl_examples() {
        let half = dist(&[0.5, 0.5]);
        assert_eq!(kl_divergence(&half, &half).unwrap(), 0.0);
        let p = dist(&[2.0 / 3.0, 1.0 / 3.0]);
        // (2/3) ln(4/3) + (1/3) ln(2/3)
        let expected = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        assert!((expected - 0.056633).abs() < 1e-6);
        assert!((kl_divergence(&p, &half).unwrap() - expected).abs() < 1e-15);
        let onehot = dist(&[1.0, 0.0]);
        assert!((kl_divergence(&onehot, &half).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_errors() {
        let onehot = dist(&[1.0, 0.0]);
        let other = dist(&[0.0, 1.0]);
        assert!(kl_divergence(&onehot, &other).is_err());
        assert!(kl_divergence(&onehot, &dist(&[0.2, 0.3, 0.5])).is_err());
        // q may vanish where p does.
        assert!(kl_divergence(&other, &dist(&[0.0, 1.0])).is_ok());
    }

    #[test]
    fn tvd_examples() {
        let p = dist(&[0.3, 0.7]);
        assert_eq!(total_variation(&p, &p).unwrap(), 0.0);
        assert_eq!(
            total_variation(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(),
            1.0
        );
        let tv = total_variation(&dist(&[0.8, 0.2]), &dist(&[0.5, 0.5])).unwrap();
        assert!((tv - 0.3).abs() < 1e-15);
        assert!(total_variation(&p, &dist(&[1.0])).is_err());
    }

    #[test]
    fn prob_dist_validation() {
        assert!(ProbDist::new(vec![0.5, 0.6]).is_err());
        assert!(ProbDist::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbDist::new(vec![]).is_err());
        assert!(ProbDist::from_weights(&[1.0, 3.0]).is_ok());
    }
}
