//! Experiment drivers: a JSON spec expands into a run matrix of
//! (method, grid point, seed), every run yields one [`MetricRow`], and
//! reports are written as CSV or JSON lines with a per-group summary.

mod drivers;
mod latency;
mod report;
mod spec;

pub use drivers::{
    plan, run_ablation, run_classification, run_ensemble_compare, run_experiment, sweep_feature_missing, sweep_hyper,
    sweep_k, sweep_label_rate, worker_threads, PlannedRun,
};
pub use latency::{bench_latency, median_ms};
pub use report::{
    emit_report, mean_std, read_jsonl, summarize, summary_path, MetricRow, ReportFormat, SummaryRow, CSV_HEADER,
};
pub use spec::{
    apply_key, AblationSpec, DatasetRef, ExperimentKind, ExperimentSpec, Grid, LatencySpec, Method, SplitSpec,
    HYPER_KEYS,
};
