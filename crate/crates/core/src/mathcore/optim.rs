use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// SGD with coupled ℓ2 decay.
    Sgd,
    /// Adam moments with decoupled weight decay (AdamW).
    AdaptiveDecoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    Cosine,
    Linear,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdaptiveDecoupled => "adamw",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adamw" | "adaptive-decoupled" => Ok(OptimizerKind::AdaptiveDecoupled),
            other => Err(Error::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
            Schedule::Linear => "linear",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            "linear" => Ok(Schedule::Linear),
            other => Err(Error::invalid(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Optimization hyperparameters for one training run.
///
/// `total_steps = 0` is accepted and means "return the initial head".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    pub lr0: f64,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    /// SGD, lr 3e-3, cosine, weight decay 1e-4, batch 32.
    fn default() -> Self {
        OptimConfig {
            optimizer: OptimizerKind::Sgd,
            lr0: 3e-3,
            schedule: Schedule::Cosine,
            weight_decay: 1e-4,
            total_steps: 250,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lr0.is_finite() && self.lr0 > 0.0,
            "learning rate must be positive, got {}",
            self.lr0
        );
        ensure!(
            self.weight_decay.is_finite() && self.weight_decay >= 0.0,
            "weight decay must be non-negative, got {}",
            self.weight_decay
        );
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.total_steps = steps;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr0 = lr;
        self
    }
}

/// Number of optimizer steps covering `epochs` passes over `n` rows.
pub fn epochs_to_steps(n: usize, batch_size: usize, epochs: usize) -> usize {
    n.div_ceil(batch_size.max(1)) * epochs
}

pub fn lr_at(config: &OptimConfig, step: usize) -> Result<f64> {
    ensure!(
        step <= config.total_steps,
        "step {step} beyond total_steps {}",
        config.total_steps
    );
    if config.total_steps == 0 {
        return Ok(config.lr0);
    }
    let progress = step as f64 / config.total_steps as f64;
    Ok(match config.schedule {
        Schedule::Constant => config.lr0,
        Schedule::Cosine => config.lr0 * 0.5 * (1.0 + (PI * progress).cos()),
        Schedule::Linear => config.lr0 * (1.0 - progress),
    })
}

fn check_shapes(param: &[f64], grad: &[f64]) -> Result<()> {
    ensure!(
        param.len() == grad.len(),
        "parameter has {} entries, gradient {}",
        param.len(),
        grad.len()
    );
    Ok(())
}

/// `param - lr * (grad + weight_decay * param)`.
pub fn sgd_step(param: &[f64], grad: &[f64], lr: f64, weight_decay: f64) -> Result<Vec<f64>> {
    check_shapes(param, grad)?;
    let mut out = param.to_vec();
    sgd_update(&mut out, grad, lr, weight_decay);
    Ok(out)
}

pub(crate) fn sgd_update(param: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= lr * (g + weight_decay * *p);
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl MomentState {
    pub fn new(len: usize) -> Self {
        MomentState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

pub fn adaptive_step(
    state: &MomentState,
    param: &[f64],
    grad: &[f64],
    lr: f64,
    weight_decay: f64,
) -> Result<(Vec<f64>, MomentState)> {
    check_shapes(param, grad)?;
    ensure!(
        state.m.len() == param.len() && state.v.len() == param.len(),
        "moment state has {} entries, parameter {}",
        state.m.len(),
        param.len()
    );
    let mut out = param.to_vec();
    let mut next = state.clone();
    adaptive_update(&mut next, &mut out, grad, lr, weight_decay);
    Ok((out, next))
}

pub(crate) fn adaptive_update(
    state: &mut MomentState,
    param: &mut [f64],
    grad: &[f64],
    lr: f64,
    weight_decay: f64,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..param.len() {
        param[i] -= lr * weight_decay * param[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}
