//! Minority-versus-majority disagreement gap for two linear heads that
//! share features and differ only in how they split weight between the
//! core and spurious coordinates.
//!
//! Probabilities use the linear link `P = (b * f + 1) / 2`, which must stay
//! inside `[0, 1]`; it is checked, never clamped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::mathcore::{total_variation, ProbDist};

pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremInstance {
    pub alpha_erm: f64,
    pub beta_erm: f64,
    pub alpha_reg: f64,
    pub beta_reg: f64,
    /// Slope of the linear link.
    pub b: f64,
    /// `|core|`, shared by both points.
    pub core_mag: f64,
    /// `|spurious|`, shared by both points.
    pub spurious_mag: f64,
    /// Sum of junk coordinates, shared by both points.
    pub junk_sum: f64,
}

/// Logits of the two heads at the minority and majority points, for a
/// positive label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceLogits {
    pub erm_min: f64,
    pub reg_min: f64,
    pub erm_maj: f64,
    pub reg_maj: f64,
}

impl TheoremInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha_erm: f64,
        beta_erm: f64,
        alpha_reg: f64,
        beta_reg: f64,
        b: f64,
        core_mag: f64,
        spurious_mag: f64,
        junk_sum: f64,
    ) -> Result<Self> {
        let inst = TheoremInstance {
            alpha_erm,
            beta_erm,
            alpha_reg,
            beta_reg,
            b,
            core_mag,
            spurious_mag,
            junk_sum,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha_erm,
            self.beta_erm,
            self.alpha_reg,
            self.beta_reg,
            self.b,
            self.core_mag,
            self.spurious_mag,
            self.junk_sum,
        ];
        ensure!(
            all.iter().all(|v| v.is_finite()),
            "instance has non-finite fields"
        );
        ensure!(
            self.alpha_erm > 0.0
                && self.beta_erm > 0.0
                && self.alpha_reg > 0.0
                && self.beta_reg > 0.0,
            "core and spurious weights must be positive"
        );
        ensure!(self.b >= 0.0, "link slope must be non-negative");
        ensure!(
            self.core_mag > 0.0 && self.spurious_mag > 0.0,
            "feature magnitudes must be positive"
        );
        let drift = (self.alpha_erm + self.beta_erm) - (self.alpha_reg + self.beta_reg);
        ensure!(
            drift.abs() <= NORMALIZATION_TOLERANCE,
            "weights are not normalized: alpha+beta differ by {drift:e}"
        );
        let l = self.logits();
        for f in [l.erm_min, l.reg_min, l.erm_maj, l.reg_maj] {
            ensure!(
                (self.b * f).abs() <= 1.0,
                "link leaves [0, 1]: |b * f| = {} > 1",
                (self.b * f).abs()
            );
        }
        Ok(())
    }

    pub fn logits(&self) -> InstanceLogits {
        let f = |alpha: f64, beta: f64, sp: f64| alpha * self.core_mag + beta * sp + self.junk_sum;
        InstanceLogits {
            erm_min: f(self.alpha_erm, self.beta_erm, -self.spurious_mag),
            reg_min: f(self.alpha_reg, self.beta_reg, -self.spurious_mag),
            erm_maj: f(self.alpha_erm, self.beta_erm, self.spurious_mag),
            reg_maj: f(self.alpha_reg, self.beta_reg, self.spurious_mag),
        }
    }

    /// Same instance with the two heads exchanged.
    pub fn swapped(&self) -> Self {
        TheoremInstance {
            alpha_erm: self.alpha_reg,
            beta_erm: self.beta_reg,
            alpha_reg: self.alpha_erm,
            beta_reg: self.beta_erm,
            ..*self
        }
    }
}

/// Closed form: `b * min(core, spurious) * |beta_erm - beta_reg|`.
pub fn tvd_gap_formula(inst: &TheoremInstance) -> Result<f64> {
    inst.validate()?;
    Ok(inst.b * inst.core_mag.min(inst.spurious_mag) * (inst.beta_erm - inst.beta_reg).abs())
}

fn link(b: f64, f: f64) -> Result<ProbDist> {
    let p = (b * f + 1.0) / 2.0;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::LinkValidity { value: p });
    }
    ProbDist::new(vec![p, 1.0 - p])
}

/// Evaluates both heads at both points, maps the logits through the link
/// and subtracts the majority TVD from the minority TVD.
pub fn tvd_gap_direct(inst: &TheoremInstance) -> Result<f64> {
    inst.validate()?;
    let l = inst.logits();
    let tvd_min = total_variation(&link(inst.b, l.erm_min)?, &link(inst.b, l.reg_min)?)?;
    let tvd_maj = total_variation(&link(inst.b, l.erm_maj)?, &link(inst.b, l.reg_maj)?)?;
    Ok(tvd_min - tvd_maj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub trials: usize,
    pub max_abs_deviation: f64,
    pub min_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub counterexample: Option<TheoremInstance>,
}

/// Draws a valid instance with distinct spurious weights, rejecting
/// candidates that break normalization or link validity.
pub fn sample_instance(rng: &mut ChaCha8Rng) -> TheoremInstance {
    loop {
        let alpha_erm: f64 = rng.random_range(0.05..1.5);
        let beta_erm: f64 = rng.random_range(0.05..1.5);
        let total = alpha_erm + beta_erm;
        let beta_reg: f64 = rng.random_range(0.0..total);
        let alpha_reg = total - beta_reg;
        let b = rng.random_range(0.01..1.0);
        let core_mag = rng.random_range(0.05..2.0);
        let spurious_mag = rng.random_range(0.05..2.0);
        let junk_sum = rng.random_range(-1.0..1.0);
        if beta_reg <= 0.0 || alpha_reg <= 0.0 || (beta_erm - beta_reg).abs() < 1e-3 {
            continue;
        }
        if let Ok(inst) = TheoremInstance::new(
            alpha_erm,
            beta_erm,
            alpha_reg,
            beta_reg,
            b,
            core_mag,
            spurious_mag,
            junk_sum,
        ) {
            return inst;
        }
    }
}

/// Checks the closed form against direct evaluation on `trials` random
/// instances. Trial `t` draws from stream `t` of the seeded generator.
pub fn verify_theorem(trials: usize, seed: u64) -> Result<TheoremReport> {
    ensure!(trials >= 1, "verification needs at least one trial");
    let results: Vec<(TheoremInstance, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let inst = sample_instance(&mut rng);
            let formula = tvd_gap_formula(&inst)?;
            let direct = tvd_gap_direct(&inst)?;
            Ok((inst, (formula - direct).abs(), direct))
        })
        .collect::<Result<_>>()?;
    let mut report = TheoremReport {
        trials,
        max_abs_deviation: 0.0,
        min_gap: f64::INFINITY,
        counterexample: None,
    };
    for (inst, deviation, gap) in results {
        report.max_abs_deviation = report.max_abs_deviation.max(deviation);
        report.min_gap = report.min_gap.min(gap);
        if deviation >= IDENTITY_TOLERANCE || gap <= 0.0 {
            return Err(Error::TheoremViolation {
                instance: inst,
                deviation,
                gap,
            });
        }
    }
    Ok(report)
}
