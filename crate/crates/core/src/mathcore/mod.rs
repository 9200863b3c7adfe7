//! Deterministic 64-bit numerical primitives: the linear head, losses,
//! divergences, gradients, optimizer steps and learning-rate schedules.
//!
//! Everything here is a pure function of its arguments.

mod dist;
mod linear;
mod optim;

pub use dist::{cross_entropy, kl_divergence, softmax, total_variation, ProbDist, MASS_TOLERANCE};
pub use linear::{ce_gradient, linear_forward, HeadGradient, LinearHead};
pub use optim::{
    adaptive_step, epochs_to_steps, lr_at, sgd_step, MomentState, OptimConfig, OptimizerKind,
    Schedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};

pub(crate) use dist::{cross_entropy_unchecked, softmax_unchecked};
pub(crate) use linear::accumulate_ce_gradient;
pub(crate) use optim::{adaptive_update, sgd_update};
