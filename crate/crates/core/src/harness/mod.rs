//! Run orchestration: configuration, the training and inference loops,
//! checkpoints, report files and the mode-comparison benchmark.

mod bench;
mod config;
mod report;
mod session;

pub use bench::{
    format_summary, run_benchmark, run_cell, summarize, write_bench, BenchRun, BenchSummary,
};
pub use config::{BufferConfig, ClusteringConfig, ModelSettings, RunConfig};
pub use report::{
    emit_reports, read_steps, ExploreRow, RelevanceRow, RunMetrics, RunReport, StepRow,
    VarianceRow, STEP_COLUMNS,
};
pub use session::{build_pools, load_checkpoint, save_checkpoint, Session, SessionState};

use crate::error::Result;
use crate::model::PolicyParams;
use crate::policy::Phase;

/// Training loop on the first half of the world.
pub fn run_training(config: &RunConfig) -> Result<(PolicyParams, RunReport)> {
    let mut session = Session::new(config, Phase::Training, None)?;
    session.run()?;
    Ok(session.finish())
}

/// Inference loop on the second half of the world, starting from `theta`.
pub fn run_inference(theta: PolicyParams, config: &RunConfig) -> Result<RunReport> {
    let mut session = Session::new(config, Phase::Inference, Some(theta))?;
    session.run()?;
    Ok(session.finish().1)
}
