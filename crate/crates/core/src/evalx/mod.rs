//! Metrics, patient-level case-finding evaluation and the ablation harness.

mod ablation;
mod casefinding;
mod metrics;

pub use ablation::{ablation_tsv, run_ablation, AblationResult, AblationRow, AblationSetup, AblationVariant, PairDelta};
pub use casefinding::{
    casefinding_patient_eval, default_threshold_grid, tune_threshold, CaseFindingOutcome, PatientDayScores,
    PatientVerdict, Verdict, EARLY_TOLERANCE_DAYS, LATE_TOLERANCE_DAYS,
};
pub use metrics::{
    accuracy, auroc_binary, average_precision, evaluate_multiclass, f1, macro_ovr, ClassMetrics, MacroValue, Metric,
    MetricsReport, AVERAGING,
};
