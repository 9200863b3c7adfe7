use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::mathcore::{OptimizerKind, Schedule};
use crate::samplers::BalanceMode;
use crate::selfselect::Divergence;

fn finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

pub(crate) fn positive_f64(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

pub(crate) fn non_negative_f64(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be non-negative, got {v}"))
    }
}

pub(crate) fn open_unit(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1), got {v}"))
    }
}

pub(crate) fn closed_unit(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1], got {v}"))
    }
}

pub(crate) fn positive_usize(s: &str) -> Result<usize, String> {
    let v: usize = s
        .parse()
        .map_err(|_| format!("`{s}` is not a non-negative integer"))?;
    if v >= 1 {
        Ok(v)
    } else {
        Err("must be at least 1".to_string())
    }
}

/// Comma-separated flag value.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct List<T>(pub Vec<T>);

fn list<T>(s: &str, item: fn(&str) -> Result<T, String>) -> Result<List<T>, String> {
    let items = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(item)
        .collect::<Result<Vec<_>, _>>()?;
    if items.is_empty() {
        return Err("list is empty".to_string());
    }
    Ok(List(items))
}

fn seed_item(s: &str) -> Result<u64, String> {
    s.parse().map_err(|_| format!("`{s}` is not a seed"))
}

fn group_item(s: &str) -> Result<usize, String> {
    s.parse().map_err(|_| format!("`{s}` is not a group id"))
}

pub(crate) fn seed_list(s: &str) -> Result<List<u64>, String> {
    list(s, seed_item)
}

pub(crate) fn unit_list(s: &str) -> Result<List<f64>, String> {
    list(s, closed_unit)
}

pub(crate) fn open_unit_list(s: &str) -> Result<List<f64>, String> {
    list(s, open_unit)
}

pub(crate) fn positive_list(s: &str) -> Result<List<f64>, String> {
    list(s, positive_f64)
}

pub(crate) fn group_list(s: &str) -> Result<List<usize>, String> {
    list(s, group_item)
}

pub const VARIANTS: [&str; 5] = [
    "random",
    "misclassification",
    "es-misclassification",
    "dropout-disagreement",
    "es-disagreement",
];

#[derive(Debug, Parser)]
#[command(
    name = "rebalance",
    version,
    about = "Group-robust last-layer retraining on frozen embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic spurious-feature dataset.
    Synth(SynthArgs),
    /// Train a head on a dataset.
    Train(TrainArgs),
    /// Retrain a fresh head on a held-out set under a balance mode.
    Retrain(RetrainArgs),
    /// Group-balanced retraining on a held-out set.
    Dfr(DfrArgs),
    /// Selective last-layer finetuning from an ERM head.
    #[command(name = "self")]
    SelfFinetune(SelfArgs),
    /// Split a dataset, train ERM on one part and retrain on the other.
    FreeLunch(FreeLunchArgs),
    /// Sweep the worst-group share of a fixed-size reweighting set.
    Ablate(AblateArgs),
    /// Evaluate a saved head.
    Eval(EvalArgs),
    /// Check the disagreement-gap identity on random instances.
    VerifyTheorem(VerifyArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Output directory for reports, heads and the run manifest.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Flat key=value file of flag values; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Seed used when --seeds is absent.
    #[arg(long, env = "REBALANCE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated seeds, one independent run per seed.
    #[arg(long, value_parser = seed_list)]
    pub seeds: Option<List<u64>>,
    /// Number of seeds run in parallel.
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    pub jobs: usize,
}

impl CommonArgs {
    pub fn resolved_seeds(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .map(|l| l.0)
            .unwrap_or_else(|| vec![self.seed])
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimArgs {
    /// Initial learning rate.
    #[arg(long, default_value_t = 3e-3, value_parser = positive_f64)]
    pub lr: f64,
    /// Optimizer steps.
    #[arg(long, default_value_t = 250)]
    pub steps: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 32, value_parser = positive_usize)]
    pub batch_size: usize,
    /// L2 weight decay (decoupled under adamw).
    #[arg(long, default_value_t = 1e-4, value_parser = non_negative_f64)]
    pub weight_decay: f64,
    /// sgd or adamw.
    #[arg(long, default_value = "sgd")]
    pub optimizer: OptimizerKind,
    /// constant, cosine or linear.
    #[arg(long, default_value = "cosine")]
    pub schedule: Schedule,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ErmArgs {
    /// File holding the ERM training set (GEMB, or CSV by extension).
    #[arg(long)]
    pub data: PathBuf,
    /// ERM initial learning rate.
    #[arg(long, default_value_t = 3e-3, value_parser = positive_f64)]
    pub erm_lr: f64,
    /// ERM epochs, converted to steps from the training set size.
    #[arg(long, default_value_t = 10, value_parser = positive_usize)]
    pub erm_epochs: usize,
    /// Overrides --erm-epochs with an explicit step count.
    #[arg(long)]
    pub erm_steps: Option<usize>,
    /// ERM minibatch size.
    #[arg(long, default_value_t = 32, value_parser = positive_usize)]
    pub erm_batch_size: usize,
    /// ERM weight decay.
    #[arg(long, default_value_t = 1e-4, value_parser = non_negative_f64)]
    pub erm_weight_decay: f64,
    /// ERM optimizer: sgd or adamw.
    #[arg(long, default_value = "sgd")]
    pub erm_optimizer: OptimizerKind,
    /// ERM schedule: constant, cosine or linear.
    #[arg(long, default_value = "cosine")]
    pub erm_schedule: Schedule,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Number of rows.
    #[arg(long, default_value_t = 10_000, value_parser = positive_usize)]
    pub n: usize,
    /// Embedding dimension (core, spurious, then junk coordinates).
    #[arg(long, default_value_t = 12)]
    pub d: usize,
    /// Share of rows whose spurious sign opposes the label.
    #[arg(long, default_value_t = 0.05, value_parser = positive_f64)]
    pub minority_rate: f64,
    /// Minimum magnitude of the core coordinate.
    #[arg(long, default_value_t = 0.3, value_parser = positive_f64)]
    pub core_magnitude: f64,
    /// Scale of the half-normal added to the core magnitude.
    #[arg(long, default_value_t = 0.3, value_parser = non_negative_f64)]
    pub core_noise: f64,
    /// Minimum magnitude of the spurious coordinate.
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    pub spurious_magnitude: f64,
    /// Scale of the half-normal added to the spurious magnitude.
    #[arg(long, default_value_t = 0.3, value_parser = non_negative_f64)]
    pub spurious_noise: f64,
    /// Standard deviation of the junk coordinates.
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    pub junk_scale: f64,
    /// Probability of class 1.
    #[arg(long, default_value_t = 0.5, value_parser = open_unit)]
    pub class_prior: f64,
    /// Comma-separated fractions for train,heldout[,test] files instead of one file.
    #[arg(long, value_parser = open_unit_list)]
    pub split: Option<List<f64>>,
    /// Write CSV instead of GEMB.
    #[arg(long, default_value_t = false)]
    pub csv: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// Training set (GEMB, or CSV by extension).
    #[arg(long)]
    pub data: PathBuf,
    /// Scored after training; defaults to the training set.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Validation set for a periodic group-accuracy trace.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Steps between validation points.
    #[arg(long, default_value_t = 50, value_parser = positive_usize)]
    pub eval_every: usize,
    /// unbalanced, class-sampling, group-sampling, spurious-sampling, class-subset or group-subset.
    #[arg(long, default_value = "unbalanced")]
    pub balance: BalanceMode,
    /// Training fractions at which checkpoints are saved.
    #[arg(long, default_value = "0.1,0.2,0.5", value_parser = open_unit_list)]
    pub checkpoints: List<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct RetrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// Held-out reweighting set.
    #[arg(long)]
    pub heldout: PathBuf,
    /// Evaluation set.
    #[arg(long)]
    pub test: PathBuf,
    /// Minibatch balance mode (see --balance of `train`).
    #[arg(long, default_value = "class-sampling")]
    pub balance: BalanceMode,
}

#[derive(Debug, Args, Serialize)]
pub struct DfrArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// Held-out reweighting set.
    #[arg(long)]
    pub heldout: PathBuf,
    /// Evaluation set.
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SelfArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub erm: ErmArgs,
    /// Minibatch balance mode of the ERM stage (see --balance of `train`).
    #[arg(long, default_value = "unbalanced")]
    pub erm_balance: BalanceMode,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// Pool the reweighting set is selected from.
    /// Held-out reweighting set.
    #[arg(long)]
    pub heldout: PathBuf,
    /// Evaluation set.
    #[arg(long)]
    pub test: PathBuf,
    /// Group-annotated set for choosing among --select-lrs.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Finetuning learning rates compared on --val; requires --val.
    #[arg(long, value_parser = positive_list)]
    pub select_lrs: Option<List<f64>>,
    /// Selection rule for the reweighting set.
    #[arg(long, default_value = "es-disagreement", value_parser = PossibleValuesParser::new(VARIANTS))]
    pub variant: String,
    /// Reweighting set size.
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub n: usize,
    /// Training fraction of the early-stopped checkpoint.
    #[arg(long, default_value_t = 0.1, value_parser = open_unit)]
    pub es_fraction: f64,
    /// Last-layer dropout probability.
    #[arg(long, default_value_t = 0.5, value_parser = open_unit)]
    pub dropout_p: f64,
    /// Averaged dropout passes per row.
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    pub dropout_passes: usize,
    /// kl or tvd.
    #[arg(long, default_value = "kl")]
    pub divergence: Divergence,
}

#[derive(Debug, Args, Serialize)]
pub struct FreeLunchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub erm: ErmArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// Evaluation set.
    #[arg(long)]
    pub test: PathBuf,
    /// Share of --data set aside for retraining.
    #[arg(long, default_value_t = 0.05, value_parser = open_unit)]
    pub holdout_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub erm: ErmArgs,
    /// Minibatch balance mode of the ERM stage (see --balance of `train`).
    #[arg(long, default_value = "unbalanced")]
    pub erm_balance: BalanceMode,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// Held-out reweighting set.
    #[arg(long)]
    pub heldout: PathBuf,
    /// Evaluation set.
    #[arg(long)]
    pub test: PathBuf,
    /// Worst-group shares of the reweighting set.
    #[arg(
        long,
        default_value = "0.025,0.05,0.125,0.25,0.375,0.5,0.625,0.75,0.875,1",
        value_parser = unit_list
    )]
    pub fractions: List<f64>,
    /// Worst groups to vary; defaults to the lowest-accuracy ERM group.
    #[arg(long, value_parser = group_list)]
    pub worst_groups: Option<List<usize>>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// GHED head file.
    #[arg(long)]
    pub head: PathBuf,
    /// Dataset to score.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Random instances checked per seed.
    #[arg(long, default_value_t = 1000, value_parser = positive_usize)]
    pub trials: usize,
}
