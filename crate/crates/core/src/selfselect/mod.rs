//! Selective last-layer finetuning: score held-out rows by misclassification
//! loss or by disagreement between the ERM head and a regularized partner,
//! keep the `n` highest-cost rows, and finetune the ERM head on them.

mod costs;
mod pipeline;

pub use costs::{
    apply_dropout_mask, disagreement_cost, dropout_cost, dropout_forward, misclassification_cost,
    select_top_n, Divergence, SelectionResult,
};
pub use pipeline::{
    run_self, selection_to_csv, SelfConfig, SelfOutcome, SelfVariant, DEFAULT_DROPOUT_PS,
    DEFAULT_ES_FRACTIONS, DEFAULT_SELECTION_SIZES,
};
