//! Language-model runtime monitor: prompt rendering, backend dispatch,
//! response parsing and the per-episode sampling loop.

pub mod backend;
pub mod oracle;
pub mod parse;
pub mod remote;
pub mod replay;
pub mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{query, Backend, BackendError, BackendRequest, BackendResponse, DEFAULT_MAX_TOKENS};
pub use oracle::{synthesize_response, synthesize_verdict, OracleError, ResponseStyle, Rule, RuleOracle, RuleOracleConfig};
pub use parse::{parse_verdict, parse_verdict_with, ParseError, ParseOptions};
pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::{prompt_digest, ReplayBackend, ReplayEntry, ReplayMode};
pub use template::{render_prompt, PromptTemplate, TemplateError, TemplateStyle};

use crate::describer::{describe, permute_description, OrderPolicy, SceneDescription, VocabularyCatalog};
use crate::episodes::{Episode, Frame, FrameVerdict};
use crate::scenegen::catalog::parse_task_spec;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("episode {episode_id}: template `{template}` needs a task specification")]
    MissingTaskSpec { episode_id: String, template: String },
    #[error("episode {episode_id}: task specification `{spec}` not understood")]
    BadTaskSpec { episode_id: String, spec: String },
    #[error("template `{template}` requires unsupported placeholder `{placeholder}`")]
    UnsupportedPlaceholder { template: String, placeholder: String },
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("episode {episode_id}: no frame at timestep {timestep}")]
    NoSuchFrame { episode_id: String, timestep: u64 },
    #[error("episode {episode_id}: all {frames} sampled frame(s) failed; first error: {first}")]
    AllFramesFailed { episode_id: String, frames: usize, first: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Query every `stride`-th frame, starting with the first.
    pub stride: usize,
    /// Upper bound on concurrent backend queries.
    pub max_in_flight: usize,
    pub order_policy: OrderPolicy,
    pub temperature: f64,
    pub max_tokens: u32,
    pub keyword_fallback: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            max_in_flight: 4,
            order_policy: OrderPolicy::AsDetected,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            keyword_fallback: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        if self.stride == 0 {
            return Err(MonitorError::Config("stride must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(MonitorError::Config("max_in_flight must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(MonitorError::Config(format!("temperature {} must be nonnegative", self.temperature)));
        }
        Ok(())
    }

    /// Stride that brings frames spaced `frame_period_s` apart down to
    /// `rate_hz` queries per second (never below 1).
    pub fn stride_for_rate(frame_period_s: f64, rate_hz: f64) -> usize {
        ((1.0 / (rate_hz * frame_period_s)).round() as usize).max(1)
    }

    fn parse_options(&self) -> ParseOptions {
        ParseOptions { keyword_fallback: self.keyword_fallback }
    }
}

/// Positions of the sampled frames within the episode.
pub fn sampled_frames(episode: &Episode, stride: usize) -> Vec<&Frame> {
    episode.frames().iter().step_by(stride.max(1)).collect()
}

/// Per-frame binding of a template's placeholders.
pub fn bindings_for(
    template: &PromptTemplate,
    episode: &Episode,
    description: &SceneDescription,
) -> Result<BTreeMap<String, String>, MonitorError> {
    let mut bindings = BTreeMap::new();
    let colors = || -> Result<(String, String), MonitorError> {
        let spec = episode.task_spec().ok_or_else(|| MonitorError::MissingTaskSpec {
            episode_id: episode.id().to_string(),
            template: template.name().to_string(),
        })?;
        let (block, bowl) = parse_task_spec(spec)
            .ok_or_else(|| MonitorError::BadTaskSpec { episode_id: episode.id().to_string(), spec: spec.to_string() })?;
        Ok((block.to_string(), bowl.to_string()))
    };
    for placeholder in template.required_placeholders() {
        let value = match placeholder.as_str() {
            "scene_description" | "scene_objects" => description.to_prompt_text(),
            "block_color" => colors()?.0,
            "bowl_color" => colors()?.1,
            other => {
                return Err(MonitorError::UnsupportedPlaceholder {
                    template: template.name().to_string(),
                    placeholder: other.to_string(),
                })
            }
        };
        bindings.insert(placeholder.clone(), value);
    }
    Ok(bindings)
}

/// A monitor bound to one template, backend and vocabulary catalog.
pub struct Monitor<'a> {
    template: &'a PromptTemplate,
    backend: &'a dyn Backend,
    vocabulary: &'a VocabularyCatalog,
    sampler: SamplerConfig,
}

impl<'a> Monitor<'a> {
    pub fn new(
        template: &'a PromptTemplate,
        backend: &'a dyn Backend,
        vocabulary: &'a VocabularyCatalog,
        sampler: SamplerConfig,
    ) -> Result<Self, MonitorError> {
        sampler.validate()?;
        Ok(Self { template, backend, vocabulary, sampler })
    }

    pub fn sampler(&self) -> &SamplerConfig {
        &self.sampler
    }

    pub fn describe(&self, episode: &Episode, frame: &Frame) -> SceneDescription {
        let vocab = if episode.scenario_class().is_driving() {
            &self.vocabulary.driving
        } else {
            &self.vocabulary.manipulation
        };
        describe(frame, vocab, self.sampler.order_policy)
    }

    pub fn prompt(&self, episode: &Episode, description: &SceneDescription) -> Result<String, MonitorError> {
        let bindings = bindings_for(self.template, episode, description)?;
        Ok(render_prompt(self.template, &bindings)?)
    }

    /// Query the backend with a rendered prompt and parse the reply. Backend
    /// and parse failures become withheld verdicts.
    pub fn judge(&self, episode_id: &str, timestep: u64, prompt: String) -> FrameVerdict {
        let request = BackendRequest {
            template: self.template.name().to_string(),
            prompt,
            temperature: self.sampler.temperature,
            max_tokens: self.sampler.max_tokens,
        };
        match query(self.backend, &request) {
            Err(e) => FrameVerdict::Failed { episode_id: episode_id.to_string(), timestep, message: e.to_string() },
            Ok(response) => match parse_verdict_with(&response.text, episode_id, timestep, self.sampler.parse_options()) {
                Ok(verdict) => FrameVerdict::Ok(verdict),
                Err(e) => FrameVerdict::Unparseable {
                    episode_id: episode_id.to_string(),
                    timestep,
                    rationale: response.text,
                    reason: e.to_string(),
                },
            },
        }
    }

    pub fn monitor_episode(&self, episode: &Episode) -> Result<Vec<FrameVerdict>, MonitorError> {
        self.monitor_remaining(episode, &BTreeSet::new())
    }

    /// Monitor the sampled frames whose timesteps are not in `done`, in
    /// frame order.
    pub fn monitor_remaining(&self, episode: &Episode, done: &BTreeSet<u64>) -> Result<Vec<FrameVerdict>, MonitorError> {
        let jobs: Vec<(u64, String)> = sampled_frames(episode, self.sampler.stride)
            .into_iter()
            .filter(|f| !done.contains(&f.timestep()))
            .map(|f| Ok((f.timestep(), self.prompt(episode, &self.describe(episode, f))?)))
            .collect::<Result<_, MonitorError>>()?;
        if jobs.is_empty() {
            return Ok(Vec::new());
        }

        let slots: Vec<Mutex<Option<FrameVerdict>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.sampler.max_in_flight.min(jobs.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((timestep, prompt)) = jobs.get(i) else { break };
                    let verdict = self.judge(episode.id(), *timestep, prompt.clone());
                    *slots[i].lock().expect("verdict slot") = Some(verdict);
                });
            }
        });
        let verdicts: Vec<FrameVerdict> =
            slots.into_iter().map(|s| s.into_inner().expect("verdict slot").expect("every job ran")).collect();

        if verdicts.iter().all(FrameVerdict::is_failed) {
            let first = match &verdicts[0] {
                FrameVerdict::Failed { message, .. } => message.clone(),
                _ => unreachable!(),
            };
            return Err(MonitorError::AllFramesFailed { episode_id: episode.id().to_string(), frames: verdicts.len(), first });
        }
        Ok(verdicts)
    }

    /// Query one frame under several seeded orderings of its description.
    pub fn probe_order(&self, episode: &Episode, timestep: u64, seeds: &[u64]) -> Result<Vec<ProbeRecord>, MonitorError> {
        let frame = episode
            .frame(timestep)
            .ok_or_else(|| MonitorError::NoSuchFrame { episode_id: episode.id().to_string(), timestep })?;
        let base = self.describe(episode, frame);
        seeds
            .iter()
            .map(|&seed| {
                let permuted = permute_description(&base, seed);
                let prompt = self.prompt(episode, &permuted)?;
                Ok(ProbeRecord { seed, lines: permuted.lines, verdict: self.judge(episode.id(), timestep, prompt) })
            })
            .collect()
    }
}

/// Monitor an episode with the bundled vocabulary.
pub fn monitor_episode(
    episode: &Episode,
    template: &PromptTemplate,
    backend: &dyn Backend,
    sampler: &SamplerConfig,
) -> Result<Vec<FrameVerdict>, MonitorError> {
    let vocabulary = VocabularyCatalog::default();
    Monitor::new(template, backend, &vocabulary, sampler.clone())?.monitor_episode(episode)
}

/// One permutation of an order-sensitivity probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub seed: u64,
    pub lines: Vec<String>,
    pub verdict: FrameVerdict,
}

/// Summary over a probe's permutations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub permutations: usize,
    pub withheld: usize,
    pub anomaly_votes: usize,
    /// Every parsed verdict agrees on the overall class and on the multiset
    /// of per-object classifications.
    pub consistent: bool,
}

pub fn summarize_probe(records: &[ProbeRecord]) -> ProbeSummary {
    let parsed: Vec<_> = records
        .iter()
        .filter_map(|r| match &r.verdict {
            FrameVerdict::Ok(v) => {
                let mut objects: Vec<_> = v.per_object.iter().map(|(o, c)| (o.to_ascii_lowercase(), *c)).collect();
                objects.sort();
                Some((v.overall, objects))
            }
            _ => None,
        })
        .collect();
    ProbeSummary {
        permutations: records.len(),
        withheld: records.len() - parsed.len(),
        anomaly_votes: parsed.iter().filter(|(o, _)| o.is_anomaly()).count(),
        consistent: parsed.windows(2).all(|w| w[0] == w[1]),
    }
}
