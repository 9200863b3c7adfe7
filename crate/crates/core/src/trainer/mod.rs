//! Last-layer training over frozen embeddings: ERM, retraining from
//! scratch, finetuning from ERM weights, DFR, class-balanced retraining
//! and the split-and-retrain protocol.
//!
//! "Retraining" always starts from a zero head; "finetuning" starts from
//! a given head.

mod checkpoint;
mod pipelines;
mod train;

pub use crate::mathcore::LinearHead;
pub use checkpoint::{decode_head, encode_head, load_head, save_head, GHED_MAGIC, GHED_VERSION};
pub use pipelines::{
    cb_last_layer_retrain, dfr, finetune_head, free_lunch, retrain, FreeLunch,
    DEFAULT_HOLDOUT_FRACTION,
};
pub use train::{
    train_head, train_head_with, CheckpointSet, TrainOptions, TrainReport, ValidationPoint,
};
