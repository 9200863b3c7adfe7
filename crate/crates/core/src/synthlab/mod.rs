//! Synthetic spurious-correlation data and the disagreement-gap identity
//! for a linear core/spurious/junk feature model.

mod generate;
mod theorem;

pub use generate::{generate_synthetic, SyntheticSpec};
pub use theorem::{
    sample_instance, tvd_gap_direct, tvd_gap_formula, verify_theorem, InstanceLogits,
    TheoremInstance, TheoremReport, IDENTITY_TOLERANCE, NORMALIZATION_TOLERANCE,
};
