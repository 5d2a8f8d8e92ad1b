//! Evaluation: interval-based driving metrics, manipulation detection rates
//! and fault confusion matrices, and report rendering.
//!
//! Withheld verdicts (unparseable or failed) are tallied on their own and
//! never coerced into either class.

mod metrics;
mod reference;
mod report;

pub use metrics::{
    episode_counts, episode_detection_rate, fault_confusion, interval_metrics, manipulation_metrics, Column,
    ConfusionMatrix2x2, Counts, DetectionRate, IntervalMetrics, Judgement, ManipulationMetrics, VerdictIndex,
};
pub use reference::{DrivingReference, ManipulationReference, RatePair, ReferenceCell, ReferenceTables, BUNDLED};
pub use report::{render_report, Entry, Report, ReportFormat};

use thiserror::Error;

use crate::episodes::ScenarioClass;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("verdict references unknown episode `{episode_id}`")]
    UnknownEpisode { episode_id: String },
    #[error("verdict references timestep {timestep} which episode `{episode_id}` does not have")]
    UnknownTimestep { episode_id: String, timestep: u64 },
    #[error("two verdicts for episode `{episode_id}` timestep {timestep}")]
    DuplicateVerdict { episode_id: String, timestep: u64 },
    #[error("no episodes of variant {variant}")]
    EmptySelection { variant: ScenarioClass },
    #[error("episode `{episode_id}` has no task outcome")]
    MissingTaskOutcome { episode_id: String },
    #[error("reference tables: {0}")]
    Reference(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Driving and manipulation metrics for one verdict set. Sections with no
/// matching episodes are `None`.
pub fn evaluate(
    episodes: &[crate::episodes::Episode],
    verdicts: &[crate::episodes::FrameVerdict],
) -> Result<(Option<IntervalMetrics>, Option<ManipulationMetrics>), EvalError> {
    let (driving, manip): (Vec<_>, Vec<_>) = episodes.iter().cloned().partition(|e| e.scenario_class().is_driving());
    let split = |subset: &[crate::episodes::Episode]| -> Vec<crate::episodes::FrameVerdict> {
        let ids: std::collections::HashSet<&str> = subset.iter().map(|e| e.id()).collect();
        verdicts.iter().filter(|v| ids.contains(v.episode_id())).cloned().collect()
    };
    // Resolve every verdict against the full corpus first.
    VerdictIndex::new(episodes, verdicts)?;
    let d = if driving.is_empty() { None } else { Some(interval_metrics(&driving, &split(&driving))?) };
    let m = if manip.is_empty() { None } else { Some(manipulation_metrics(&manip, &split(&manip))?) };
    Ok((d, m))
}
