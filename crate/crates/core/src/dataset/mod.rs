//! Embedding datasets, deterministic splits, file ingest, and annotation
//! bookkeeping.

mod embedding;
mod io;
mod ledger;
mod split;

pub use embedding::{group_counts, group_id, group_parts, EmbeddingDataset};
pub use io::{
    decode_csv, decode_gemb, encode_csv, encode_gemb, load_embeddings, save_embeddings, GEMB_MAGIC,
    GEMB_VERSION,
};
pub use ledger::{reveal_labels, AnnotationCounts, AnnotationKind, AnnotationLedger};
pub use split::{split, split_indices, SplitSpec};

#[cfg(test)]
pub(crate) use embedding::grouped;
