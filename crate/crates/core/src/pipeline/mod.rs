//! Online day-by-day training and scoring, score centering and ROC/AUC.
//!
//! Each day is first scored with a frozen parameter copy, then used to
//! train the live copy, then dropped; the frozen copy is refreshed from the
//! live one at the day boundary. The first day is only trained on.

mod cycle;
mod repeat;
mod roc;
mod scoring;

pub use cycle::{run_stream, DayCycleState, DayReport, TrainConfig, TrainStats};
pub use repeat::{repeat_runs, roc_for, AucSummary, Experiment, ExperimentOutcome};
pub use roc::{auc_roc, RocCurve};
pub use scoring::{center_user_scores, finalize_scores, score_line, ScoredEvent};
