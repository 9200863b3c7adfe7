use serde::{Deserialize, Serialize};

use super::dist::{cross_entropy_unchecked, softmax_unchecked};
use crate::error::{ensure, Result};

/// Retrainable last layer: `logits = W x + b` with `W` stored row-major,
/// one row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    num_classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        LinearHead {
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn from_parts(
        num_classes: usize,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        ensure!(
            num_classes >= 1 && dim >= 1,
            "head needs at least one class and one input dimension"
        );
        ensure!(
            weights.len() == num_classes * dim,
            "weight matrix has {} entries, expected {num_classes}x{dim}",
            weights.len()
        );
        ensure!(
            bias.len() == num_classes,
            "bias has {} entries, expected {num_classes}",
            bias.len()
        );
        ensure!(
            weights.iter().chain(&bias).all(|v| v.is_finite()),
            "head parameters must be finite"
        );
        Ok(LinearHead {
            num_classes,
            dim,
            weights,
            bias,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    /// Frobenius norm of `self - other` over weights and bias.
    pub fn distance(&self, other: &LinearHead) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .chain(self.bias.iter().zip(&other.bias))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        ensure!(
            x.len() == self.dim,
            "embedding has {} coordinates, head expects {}",
            x.len(),
            self.dim
        );
        Ok(())
    }

    /// Argmax prediction; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut logits = vec![0.0; self.num_classes];
        self.forward_into(x, &mut logits);
        argmax(&logits)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn linear_forward(head: &LinearHead, embedding: &[f64]) -> Result<Vec<f64>> {
    head.check_input(embedding)?;
    let mut out = vec![0.0; head.num_classes];
    head.forward_into(embedding, &mut out);
    Ok(out)
}

/// Gradient of the cross-entropy loss with respect to the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    /// Row-major, same layout as [`LinearHead::weights`].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn ce_gradient(head: &LinearHead, embedding: &[f64], label: usize) -> Result<HeadGradient> {
    head.check_input(embedding)?;
    ensure!(
        label < head.num_classes,
        "label {label} out of range for {} classes",
        head.num_classes
    );
    let mut grad = HeadGradient {
        weights: vec![0.0; head.weights.len()],
        bias: vec![0.0; head.num_classes],
    };
    let mut scratch = vec![0.0; head.num_classes];
    accumulate_ce_gradient(head, embedding, label, 1.0, &mut grad, &mut scratch);
    Ok(grad)
}

/// Adds `scale * dL/dθ` into `grad` and returns the loss. `scratch` must
/// hold `num_classes` entries. Shapes are the caller's responsibility.
pub(crate) fn accumulate_ce_gradient(
    head: &LinearHead,
    x: &[f64],
    label: usize,
    scale: f64,
    grad: &mut HeadGradient,
    scratch: &mut [f64],
) -> f64 {
    head.forward_into(x, scratch);
    let loss = cross_entropy_unchecked(scratch, label);
    let probs = softmax_unchecked(scratch);
    for (c, p) in probs.iter().enumerate() {
        let residual = scale * (p - if c == label { 1.0 } else { 0.0 });
        grad.bias[c] += residual;
        let row = &mut grad.weights[c * head.dim..(c + 1) * head.dim];
        for (g, v) in row.iter_mut().zip(x) {
            *g += residual * v;
        }
    }
    loss
}
