//! Stage orchestration for the agfsync pipeline: configuration, manifests,
//! resumable stages, and reports.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, PipelineConfig};
pub use manifest::{Stage, StageManifest, StageStatus};
pub use pipeline::{Pipeline, PipelineError, RunOptions, StageRun};

pub const EXIT_OK: i32 = 0;
/// I/O and other unexpected failures.
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::UpstreamMissing { .. } | PipelineError::UpstreamIncomplete { .. } => {
                EXIT_CONFIG
            }
            PipelineError::Input { .. } | PipelineError::Io(_) => EXIT_ERROR,
        }
    }
}

impl StageStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            StageStatus::Complete => EXIT_OK,
            StageStatus::Partial => EXIT_PARTIAL,
            StageStatus::Failed => EXIT_BACKEND,
        }
    }
}

/// Run `stages` in order, stopping at the first one that does not complete.
pub fn run_stages(pipeline: &Pipeline, stages: &[Stage], opts: RunOptions) -> Result<Vec<StageRun>, PipelineError> {
    let mut runs = Vec::with_capacity(stages.len());
    for &stage in stages {
        let run = pipeline.run_stage(stage, opts)?;
        let done = run.manifest.status == StageStatus::Complete;
        runs.push(run);
        if !done {
            break;
        }
    }
    Ok(runs)
}
