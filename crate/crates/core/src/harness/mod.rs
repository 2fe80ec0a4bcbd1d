//! Experiment orchestration: configuration, run directories with stage
//! gating, the staged pipeline and report generation.

mod artifacts;
mod config;
mod pipeline;
mod report;
mod summary;
mod svg;

pub use artifacts::{RunDir, RunManifest, OUT_ENV};
pub use config::{DataConfig, EvalConfig, ExperimentConfig};
pub use pipeline::{
    stage_attack, stage_filter, stage_pairs, stage_rm, Lab, STAGE_EVALUATE, STAGE_POLICY,
    STAGE_REPORT, STAGE_WORLD,
};
pub use report::{render_markdown, trace_csv, write_csv};
pub use summary::{CorrelationRow, DownstreamRow, EvalSummary, MethodRow, RoundRow};
pub use svg::{bar_chart, line_chart, scatter, Series};
