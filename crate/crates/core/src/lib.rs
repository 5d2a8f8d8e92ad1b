//! Semantic anomaly monitoring for autonomous systems.
//!
//! Perception frames are rendered as natural-language scene descriptions,
//! embedded in a prompt template and classified by a language-model backend.
//! Classical OOD detectors (PCA + Gaussian mixture, reconstruction error)
//! run over the same corpora, and everything is scored with interval-based
//! metrics.

pub mod baselines;
pub mod describer;
pub mod episodes;
pub mod eval;
pub mod monitor;
pub mod scenegen;

pub use describer::{describe, permute_description, OrderPolicy, SceneDescription, Vocabulary, VocabularyCatalog};
pub use episodes::{
    read_episodes, read_verdicts, write_episodes, write_verdicts, AnomalyKind, Classification, Detection,
    Episode, EpisodeBuilder, Frame, FrameVerdict, MonitorVerdict, PersistError, ScenarioClass, TaskOutcome,
    ValidationError, VisibilityInterval,
};
pub use scenegen::{generate, GenConfig, GenError, NoiseConfig};
pub use baselines::{
    calibrate, fit_baseline, BaselineConfig, BaselineError, BaselineModel, CalibratedDetector, ScoreKind,
};
pub use eval::{render_report, EvalError, ReferenceTables, Report, ReportFormat};
pub use monitor::{
    monitor_episode, Backend, BackendError, Monitor, MonitorError, PromptTemplate, RuleOracle, SamplerConfig,
};
