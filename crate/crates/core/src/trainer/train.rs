use crate::dataset::EmbeddingDataset;
use crate::error::{ensure, Error, Result};
use crate::evalreport::{evaluate, GroupMetrics};
use crate::mathcore::{
    accumulate_ce_gradient, adaptive_update, lr_at, sgd_update, HeadGradient, LinearHead,
    MomentState, OptimConfig, OptimizerKind,
};
use crate::samplers::{balanced_batch_stream, BalanceMode};

/// Heads snapshotted at fractions of the training budget. The final head
/// is always stored under fraction 1.0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointSet {
    entries: Vec<(f64, LinearHead)>,
}

impl CheckpointSet {
    fn insert(&mut self, fraction: f64, head: LinearHead) {
        match self.entries.iter_mut().find(|(f, _)| *f == fraction) {
            Some(slot) => slot.1 = head,
            None => {
                self.entries.push((fraction, head));
                self.entries.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
        }
    }

    /// Head saved at `fraction` (matched to within 1e-9).
    pub fn get(&self, fraction: f64) -> Option<&LinearHead> {
        self.entries
            .iter()
            .find(|(f, _)| (f - fraction).abs() < 1e-9)
            .map(|(_, h)| h)
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.entries.iter().map(|(f, _)| *f).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &LinearHead)> {
        self.entries.iter().map(|(f, h)| (*f, h))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPoint {
    /// Optimizer steps completed when the metrics were taken.
    pub step: usize,
    pub metrics: GroupMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub head: LinearHead,
    pub checkpoints: CheckpointSet,
    /// Mean minibatch loss at each step, measured before the update.
    pub loss_trace: Vec<f64>,
    pub validation_trace: Vec<ValidationPoint>,
    pub config: OptimConfig,
    pub mode: BalanceMode,
}

impl TrainReport {
    /// Checkpoint at `fraction`, or an error naming the available ones.
    pub fn checkpoint(&self, fraction: f64) -> Result<&LinearHead> {
        self.checkpoints.get(fraction).ok_or_else(|| {
            Error::invalid(format!(
                "no checkpoint at fraction {fraction}; have {:?}",
                self.checkpoints.fractions()
            ))
        })
    }
}

/// Optional extras for [`train_head_with`].
#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    pub init: Option<&'a LinearHead>,
    pub checkpoints: &'a [f64],
    /// Per-group validation metrics are recorded every `eval_every` steps
    /// and after the last step.
    pub validation: Option<&'a EmbeddingDataset>,
    pub eval_every: usize,
}

enum OptState {
    Sgd,
    Adaptive {
        weights: MomentState,
        bias: MomentState,
    },
}

fn checkpoint_step(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64).ceil() as usize).min(total)
}

pub fn train_head(
    ds: &EmbeddingDataset,
    mode: BalanceMode,
    config: &OptimConfig,
    init: Option<&LinearHead>,
    checkpoints: &[f64],
) -> Result<TrainReport> {
    train_head_with(
        ds,
        mode,
        config,
        &TrainOptions {
            init,
            checkpoints,
            ..TrainOptions::default()
        },
    )
}

/// Minibatch training of a linear head over `balanced_batch_stream`.
/// Without an initial head the weights start at zero.
pub fn train_head_with(
    ds: &EmbeddingDataset,
    mode: BalanceMode,
    config: &OptimConfig,
    opts: &TrainOptions<'_>,
) -> Result<TrainReport> {
    config.validate()?;
    let k = ds.num_classes();
    let d = ds.dim();
    if let Some(init) = opts.init {
        ensure!(
            init.num_classes() == k && init.dim() == d,
            "initial head is {}x{}, dataset needs {k}x{d}",
            init.num_classes(),
            init.dim()
        );
    }
    for &f in opts.checkpoints {
        ensure!(
            f > 0.0 && f <= 1.0,
            "checkpoint fraction {f} outside (0, 1]"
        );
    }
    if let Some(val) = opts.validation {
        ensure!(
            val.dim() == d && val.num_classes() == k,
            "validation set shape does not match training set"
        );
    }

    let mut head = opts
        .init
        .cloned()
        .unwrap_or_else(|| LinearHead::zeros(k, d));
    let total = config.total_steps;
    let mut report = TrainReport {
        head: head.clone(),
        checkpoints: CheckpointSet::default(),
        loss_trace: Vec::with_capacity(total),
        validation_trace: Vec::new(),
        config: config.clone(),
        mode,
    };
    let mut fractions: Vec<(usize, f64)> = opts
        .checkpoints
        .iter()
        .map(|&f| (checkpoint_step(f, total), f))
        .collect();
    fractions.push((total, 1.0));
    let snapshot = |report: &mut TrainReport, head: &LinearHead, done: usize| {
        for &(at, f) in &fractions {
            if at == done {
                report.checkpoints.insert(f, head.clone());
            }
        }
    };
    snapshot(&mut report, &head, 0);
    let record_val = |report: &mut TrainReport, head: &LinearHead, done: usize| -> Result<()> {
        if let Some(val) = opts.validation {
            report.validation_trace.push(ValidationPoint {
                step: done,
                metrics: evaluate(head, val)?,
            });
        }
        Ok(())
    };
    if total == 0 {
        record_val(&mut report, &head, 0)?;
        return Ok(report);
    }

    let mut stream = balanced_batch_stream(ds, mode, config.batch_size, config.seed)?;
    let mut opt = match config.optimizer {
        OptimizerKind::Sgd => OptState::Sgd,
        OptimizerKind::AdaptiveDecoupled => OptState::Adaptive {
            weights: MomentState::new(k * d),
            bias: MomentState::new(k),
        },
    };
    let mut grad = HeadGradient {
        weights: vec![0.0; k * d],
        bias: vec![0.0; k],
    };
    let mut scratch = vec![0.0; k];
    for step in 0..total {
        let batch = stream.next().expect("batch streams are infinite");
        grad.weights.fill(0.0);
        grad.bias.fill(0.0);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in &batch {
            loss += accumulate_ce_gradient(
                &head,
                ds.row(i),
                ds.class(i),
                scale,
                &mut grad,
                &mut scratch,
            );
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        report.loss_trace.push(loss);

        let lr = lr_at(config, step)?;
        let wd = config.weight_decay;
        let (w, b) = head.params_mut();
        match &mut opt {
            OptState::Sgd => {
                sgd_update(w, &grad.weights, lr, wd);
                sgd_update(b, &grad.bias, lr, wd);
            }
            OptState::Adaptive { weights, bias } => {
                adaptive_update(weights, w, &grad.weights, lr, wd);
                adaptive_update(bias, b, &grad.bias, lr, wd);
            }
        }
        if !head
            .weights()
            .iter()
            .chain(head.bias())
            .all(|v| v.is_finite())
        {
            return Err(Error::Divergence {
                step,
                loss: f64::NAN,
            });
        }
        let done = step + 1;
        snapshot(&mut report, &head, done);
        if opts.eval_every > 0 && done % opts.eval_every == 0 && done != total {
            record_val(&mut report, &head, done)?;
        }
    }
    record_val(&mut report, &head, total)?;
    report.head = head;
    Ok(report)
}

#[cfg(test)]
pub(crate) use tests::separable;
