//! Group-robust last-layer retraining on frozen feature embeddings.
//!
//! The crate trains and retrains a linear head over fixed embeddings with
//! class- or group-balanced minibatches, builds selective reweighting sets
//! from misclassification or model disagreement, and reports per-group and
//! worst-group accuracy. [`synthlab`] provides a synthetic spurious-feature
//! benchmark and an exact check of the minority/majority disagreement gap.

mod binio;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evalreport;
pub mod mathcore;
pub mod samplers;
pub mod selfselect;
pub mod synthlab;
pub mod trainer;

pub use error::{Error, ParseError, Result};
