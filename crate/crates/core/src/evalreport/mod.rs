//! Group-wise evaluation, model selection, the worst-group ablation sweep
//! and report emission.

mod ablation;
mod metrics;
mod report;

pub use ablation::{
    erm_worst_group, run_wg_ablation, AblationRow, AblationTable, DEFAULT_ABLATION_FRACTIONS,
};
pub use metrics::{evaluate, model_select, GroupMetrics};
pub use report::{
    emit_report, load_report, mean_std, report_to_csv, round_sig6, to_json_string,
    ExperimentReport, ReportFormat, SeedResult, CSV_HEADER,
};
