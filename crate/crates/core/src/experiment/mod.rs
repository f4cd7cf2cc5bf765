//! Experiment harness: configuration, staged pipeline, reports and figures.

pub mod config;
pub mod plots;
pub mod report;
pub mod stages;
pub mod workspace;

pub use config::{ClassifierChoice, PipelineConfig};
pub use report::{comparison_text, Evaluation, EvaluationReport, Prediction, System};
pub use stages::{
    evaluate, extract_features, extract_ivectors, fit_postproc, ingest, plot, run_pipeline, train_backend, train_tv,
    train_ubm, EvaluationOutcome,
};
pub use workspace::{parse_audit_lines, LeakageAudit, Workspace, AUDITED_COMPONENTS};
