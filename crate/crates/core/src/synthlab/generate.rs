use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{ensure, Result};

/// Linear feature model with one core coordinate, one spurious coordinate
/// and `d - 2` junk coordinates.
///
/// Labels satisfy `y = sgn(core)`. Majority rows have `y * spurious > 0`,
/// minority rows `y * spurious < 0`. The spurious label of a row is 1
/// exactly when it is a minority row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub minority_rate: f64,
    pub core_magnitude: f64,
    pub core_noise: f64,
    pub spurious_magnitude: f64,
    pub spurious_noise: f64,
    pub junk_scale: f64,
    /// Probability of the positive class.
    pub class_prior: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 10_000,
            d: 12,
            minority_rate: 0.05,
            core_magnitude: 0.3,
            core_noise: 0.3,
            spurious_magnitude: 1.0,
            spurious_noise: 0.3,
            junk_scale: 1.0,
            class_prior: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n >= 1, "n must be positive");
        ensure!(
            self.d >= 3,
            "d must be at least 3 (core, spurious, junk), got {}",
            self.d
        );
        ensure!(
            self.minority_rate > 0.0 && self.minority_rate <= 0.5,
            "minority rate must lie in (0, 0.5], got {}",
            self.minority_rate
        );
        ensure!(
            self.class_prior > 0.0 && self.class_prior < 1.0,
            "class prior must lie in (0, 1), got {}",
            self.class_prior
        );
        for (name, v) in [
            ("core_magnitude", self.core_magnitude),
            ("spurious_magnitude", self.spurious_magnitude),
        ] {
            ensure!(v.is_finite() && v > 0.0, "{name} must be positive, got {v}");
        }
        for (name, v) in [
            ("core_noise", self.core_noise),
            ("spurious_noise", self.spurious_noise),
            ("junk_scale", self.junk_scale),
        ] {
            ensure!(
                v.is_finite() && v >= 0.0,
                "{name} must be non-negative, got {v}"
            );
        }
        Ok(())
    }
}

/// Samples the dataset. Features are rounded to f32 so that a GEMB round
/// trip reproduces them exactly.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<EmbeddingDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features = Vec::with_capacity(spec.n * spec.d);
    let mut classes = Vec::with_capacity(spec.n);
    let mut spurious = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let y: f64 = if rng.random::<f64>() < spec.class_prior {
            1.0
        } else {
            -1.0
        };
        let minority = rng.random::<f64>() < spec.minority_rate;
        let zc: f64 = rng.sample(StandardNormal);
        let zs: f64 = rng.sample(StandardNormal);
        let core = y * (spec.core_magnitude + (spec.core_noise * zc).abs());
        let sign = if minority { -y } else { y };
        let sp = sign * (spec.spurious_magnitude + (spec.spurious_noise * zs).abs());
        features.push(core as f32 as f64);
        features.push(sp as f32 as f64);
        for _ in 2..spec.d {
            let z: f64 = rng.sample(StandardNormal);
            // Adding zero folds -0.0 into +0.0.
            features.push((spec.junk_scale * z) as f32 as f64 + 0.0);
        }
        classes.push(((y + 1.0) / 2.0) as u32);
        spurious.push(minority as u32);
    }
    EmbeddingDataset::new(spec.d, features, classes, Some(spurious), 2, 2)
}
