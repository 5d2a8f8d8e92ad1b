//! Observation, episode and verdict data model.
//!
//! Every type with an invariant validates on construction and on
//! deserialization (`serde(try_from)`), so an invalid value is never
//! observable. Persistence is one JSON record per line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default spacing between evaluated observations (2 Hz).
pub const DEFAULT_FRAME_PERIOD_S: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("detection label must be nonempty")]
    EmptyLabel,
    #[error("detection confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("frame time {0} must be a nonnegative finite number of seconds")]
    InvalidTime(f64),
    #[error("interval end {end} precedes start {start}")]
    IntervalInverted { start: u64, end: u64 },
    #[error("episode id must be nonempty")]
    EmptyEpisodeId,
    #[error("episode {episode}: timestep {timestep} does not strictly follow {previous}")]
    TimestepOrder { episode: String, previous: u64, timestep: u64 },
    #[error("episode {episode}: frame {timestep} has embedding length {found}, expected {expected}")]
    EmbeddingLength { episode: String, timestep: u64, expected: usize, found: usize },
    #[error("episode {episode}: interval [{start}, {end}] lies outside the frame range")]
    IntervalOutOfRange { episode: String, start: u64, end: u64 },
    #[error("episode {episode}: intervals [{a_start}, {a_end}] and [{b_start}, {b_end}] overlap or are unsorted")]
    IntervalOrder { episode: String, a_start: u64, a_end: u64, b_start: u64, b_end: u64 },
    #[error("episode {episode}: scenario class {class} cannot carry anomaly intervals")]
    UnexpectedInterval { episode: String, class: ScenarioClass },
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: episode {episode_id}: {source}")]
    Invalid { line: usize, episode_id: String, source: ValidationError },
    #[error("episode {episode_id}, timestep {timestep}: embedding contains a non-finite value")]
    NonFiniteEmbedding { episode_id: String, timestep: u64 },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    #[default]
    Normal,
    Anomaly,
}

impl Classification {
    pub fn is_anomaly(self) -> bool {
        self == Classification::Anomaly
    }

    /// Capitalized form used in response text ("Normal", "Anomaly").
    pub fn title(self) -> &'static str {
        match self {
            Classification::Normal => "Normal",
            Classification::Anomaly => "Anomaly",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Normal => "normal",
            Classification::Anomaly => "anomaly",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    StopSign,
    TrafficLight,
    StrangeObject,
    SemanticDistractor,
    NeutralDistractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioClass {
    NominalStop,
    NominalLight,
    AnomalousStop,
    AnomalousLight,
    StrangeObject,
    ManipBaseline,
    ManipNeutral,
    ManipSemantic,
}

impl ScenarioClass {
    pub const ALL: [ScenarioClass; 8] = [
        ScenarioClass::NominalStop,
        ScenarioClass::NominalLight,
        ScenarioClass::AnomalousStop,
        ScenarioClass::AnomalousLight,
        ScenarioClass::StrangeObject,
        ScenarioClass::ManipBaseline,
        ScenarioClass::ManipNeutral,
        ScenarioClass::ManipSemantic,
    ];

    pub const DRIVING: [ScenarioClass; 5] = [
        ScenarioClass::NominalStop,
        ScenarioClass::NominalLight,
        ScenarioClass::AnomalousStop,
        ScenarioClass::AnomalousLight,
        ScenarioClass::StrangeObject,
    ];

    /// Classes that never contain an anomaly interval.
    pub fn is_nominal(self) -> bool {
        matches!(
            self,
            ScenarioClass::NominalStop | ScenarioClass::NominalLight | ScenarioClass::ManipBaseline
        )
    }

    pub fn is_driving(self) -> bool {
        !self.is_manipulation()
    }

    pub fn is_manipulation(self) -> bool {
        matches!(
            self,
            ScenarioClass::ManipBaseline | ScenarioClass::ManipNeutral | ScenarioClass::ManipSemantic
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioClass::NominalStop => "nominal_stop",
            ScenarioClass::NominalLight => "nominal_light",
            ScenarioClass::AnomalousStop => "anomalous_stop",
            ScenarioClass::AnomalousLight => "anomalous_light",
            ScenarioClass::StrangeObject => "strange_object",
            ScenarioClass::ManipBaseline => "manip_baseline",
            ScenarioClass::ManipNeutral => "manip_neutral",
            ScenarioClass::ManipSemantic => "manip_semantic",
        }
    }

    /// The anomaly kind a generated interval of this class carries.
    pub fn anomaly_kind(self) -> Option<AnomalyKind> {
        match self {
            ScenarioClass::AnomalousStop => Some(AnomalyKind::StopSign),
            ScenarioClass::AnomalousLight => Some(AnomalyKind::TrafficLight),
            ScenarioClass::StrangeObject => Some(AnomalyKind::StrangeObject),
            ScenarioClass::ManipNeutral => Some(AnomalyKind::NeutralDistractor),
            ScenarioClass::ManipSemantic => Some(AnomalyKind::SemanticDistractor),
            _ => None,
        }
    }
}

impl fmt::Display for ScenarioClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown scenario class `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOutcome {
    Success,
    Failure,
}

/// One detected object: a label and the predicate giving its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    label: String,
    predicate: String,
    confidence: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    label: String,
    #[serde(default)]
    predicate: String,
    confidence: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = ValidationError;

    fn try_from(raw: RawDetection) -> Result<Self, Self::Error> {
        Detection::new(raw.label, raw.predicate, raw.confidence)
    }
}

impl Detection {
    pub fn new(
        label: impl Into<String>,
        predicate: impl Into<String>,
        confidence: f64,
    ) -> Result<Self, ValidationError> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(ValidationError::EmptyLabel);
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ValidationError::ConfidenceOutOfRange(confidence));
        }
        Ok(Self { label, predicate: predicate.into(), confidence })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn with_label(&self, label: impl Into<String>) -> Result<Self, ValidationError> {
        Detection::new(label, self.predicate.clone(), self.confidence)
    }

    pub fn with_predicate(&self, predicate: impl Into<String>) -> Self {
        Self { predicate: predicate.into(), ..self.clone() }
    }
}

/// All detections observed at one evaluated timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFrame")]
pub struct Frame {
    timestep: u64,
    time_s: f64,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_scores: Option<BTreeMap<String, f64>>,
}

#[derive(Deserialize)]
struct RawFrame {
    timestep: u64,
    time_s: f64,
    #[serde(default)]
    detections: Vec<RawDetection>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    #[serde(default)]
    external_scores: Option<BTreeMap<String, f64>>,
}

impl TryFrom<RawFrame> for Frame {
    type Error = ValidationError;

    fn try_from(raw: RawFrame) -> Result<Self, Self::Error> {
        let detections = raw.detections.into_iter().map(Detection::try_from).collect::<Result<_, _>>()?;
        let mut frame = Frame::new(raw.timestep, raw.time_s, detections)?;
        frame.embedding = raw.embedding;
        frame.external_scores = raw.external_scores;
        Ok(frame)
    }
}

impl Frame {
    pub fn new(timestep: u64, time_s: f64, detections: Vec<Detection>) -> Result<Self, ValidationError> {
        if !time_s.is_finite() || time_s < 0.0 {
            return Err(ValidationError::InvalidTime(time_s));
        }
        Ok(Self { timestep, time_s, detections, embedding: None, external_scores: None })
    }

    /// Frame at the default 2 Hz spacing.
    pub fn at(timestep: u64, detections: Vec<Detection>) -> Self {
        Self {
            timestep,
            time_s: timestep as f64 * DEFAULT_FRAME_PERIOD_S,
            detections,
            embedding: None,
            external_scores: None,
        }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn with_external_score(mut self, name: impl Into<String>, score: f64) -> Self {
        self.external_scores.get_or_insert_with(BTreeMap::new).insert(name.into(), score);
        self
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }
}

/// Inclusive timestep range during which a ground-truth anomaly is in view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval")]
pub struct VisibilityInterval {
    start: u64,
    end: u64,
    anomaly_kind: AnomalyKind,
}

#[derive(Deserialize)]
struct RawInterval {
    start: u64,
    end: u64,
    anomaly_kind: AnomalyKind,
}

impl TryFrom<RawInterval> for VisibilityInterval {
    type Error = ValidationError;

    fn try_from(raw: RawInterval) -> Result<Self, Self::Error> {
        VisibilityInterval::new(raw.start, raw.end, raw.anomaly_kind)
    }
}

impl VisibilityInterval {
    pub fn new(start: u64, end: u64, anomaly_kind: AnomalyKind) -> Result<Self, ValidationError> {
        if end < start {
            return Err(ValidationError::IntervalInverted { start, end });
        }
        Ok(Self { start, end, anomaly_kind })
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    pub fn anomaly_kind(&self) -> AnomalyKind {
        self.anomaly_kind
    }

    pub fn contains(&self, timestep: u64) -> bool {
        (self.start..=self.end).contains(&timestep)
    }
}

/// The unit of evaluation: a scenario's frames plus its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEpisode")]
pub struct Episode {
    id: String,
    scenario_class: ScenarioClass,
    frames: Vec<Frame>,
    anomaly_intervals: Vec<VisibilityInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task_outcome: Option<TaskOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task_spec: Option<String>,
}

#[derive(Deserialize)]
struct RawEpisode {
    id: String,
    scenario_class: ScenarioClass,
    frames: Vec<RawFrame>,
    #[serde(default)]
    anomaly_intervals: Vec<RawInterval>,
    #[serde(default)]
    task_outcome: Option<TaskOutcome>,
    #[serde(default)]
    task_spec: Option<String>,
}

impl TryFrom<RawEpisode> for Episode {
    type Error = ValidationError;

    fn try_from(raw: RawEpisode) -> Result<Self, Self::Error> {
        let frames = raw.frames.into_iter().map(Frame::try_from).collect::<Result<_, _>>()?;
        let intervals =
            raw.anomaly_intervals.into_iter().map(VisibilityInterval::try_from).collect::<Result<_, _>>()?;
        Episode::builder(raw.id, raw.scenario_class)
            .frames(frames)
            .intervals(intervals)
            .task_outcome(raw.task_outcome)
            .task_spec(raw.task_spec)
            .build()
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeBuilder {
    id: String,
    scenario_class: ScenarioClass,
    frames: Vec<Frame>,
    anomaly_intervals: Vec<VisibilityInterval>,
    task_outcome: Option<TaskOutcome>,
    task_spec: Option<String>,
}

impl EpisodeBuilder {
    pub fn frames(mut self, frames: Vec<Frame>) -> Self {
        self.frames = frames;
        self
    }

    pub fn intervals(mut self, intervals: Vec<VisibilityInterval>) -> Self {
        self.anomaly_intervals = intervals;
        self
    }

    pub fn task_outcome(mut self, outcome: Option<TaskOutcome>) -> Self {
        self.task_outcome = outcome;
        self
    }

    pub fn task_spec(mut self, spec: Option<String>) -> Self {
        self.task_spec = spec;
        self
    }

    pub fn build(self) -> Result<Episode, ValidationError> {
        let episode = Episode {
            id: self.id,
            scenario_class: self.scenario_class,
            frames: self.frames,
            anomaly_intervals: self.anomaly_intervals,
            task_outcome: self.task_outcome,
            task_spec: self.task_spec,
        };
        episode.validate()?;
        Ok(episode)
    }
}

impl Episode {
    pub fn builder(id: impl Into<String>, scenario_class: ScenarioClass) -> EpisodeBuilder {
        EpisodeBuilder {
            id: id.into(),
            scenario_class,
            frames: Vec::new(),
            anomaly_intervals: Vec::new(),
            task_outcome: None,
            task_spec: None,
        }
    }

    fn validate(&self) -> Result<(), ValidationError> {
        let episode = || self.id.clone();
        if self.id.is_empty() {
            return Err(ValidationError::EmptyEpisodeId);
        }
        for pair in self.frames.windows(2) {
            if pair[1].timestep <= pair[0].timestep {
                return Err(ValidationError::TimestepOrder {
                    episode: episode(),
                    previous: pair[0].timestep,
                    timestep: pair[1].timestep,
                });
            }
        }
        let mut expected_len = None;
        for frame in &self.frames {
            if let Some(embedding) = &frame.embedding {
                let expected = *expected_len.get_or_insert(embedding.len());
                if embedding.len() != expected {
                    return Err(ValidationError::EmbeddingLength {
                        episode: episode(),
                        timestep: frame.timestep,
                        expected,
                        found: embedding.len(),
                    });
                }
            }
        }
        if self.scenario_class.is_nominal() && !self.anomaly_intervals.is_empty() {
            return Err(ValidationError::UnexpectedInterval {
                episode: episode(),
                class: self.scenario_class,
            });
        }
        let range = self.frames.first().map(|f| f.timestep).zip(self.frames.last().map(|f| f.timestep));
        for interval in &self.anomaly_intervals {
            let inside = matches!(range, Some((lo, hi)) if interval.start >= lo && interval.end <= hi);
            if !inside {
                return Err(ValidationError::IntervalOutOfRange {
                    episode: episode(),
                    start: interval.start,
                    end: interval.end,
                });
            }
        }
        for pair in self.anomaly_intervals.windows(2) {
            if pair[1].start <= pair[0].end {
                return Err(ValidationError::IntervalOrder {
                    episode: episode(),
                    a_start: pair[0].start,
                    a_end: pair[0].end,
                    b_start: pair[1].start,
                    b_end: pair[1].end,
                });
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn scenario_class(&self) -> ScenarioClass {
        self.scenario_class
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn anomaly_intervals(&self) -> &[VisibilityInterval] {
        &self.anomaly_intervals
    }

    pub fn task_outcome(&self) -> Option<TaskOutcome> {
        self.task_outcome
    }

    pub fn task_spec(&self) -> Option<&str> {
        self.task_spec.as_deref()
    }

    pub fn frame(&self, timestep: u64) -> Option<&Frame> {
        self.frames
            .binary_search_by_key(&timestep, |f| f.timestep)
            .ok()
            .map(|i| &self.frames[i])
    }

    /// Whether any ground-truth anomaly is in view at `timestep`.
    pub fn in_view(&self, timestep: u64) -> bool {
        self.anomaly_intervals.iter().any(|i| i.contains(timestep))
    }

    /// Embedding length shared by this episode's frames, if any frame has one.
    pub fn embedding_dim(&self) -> Option<usize> {
        self.frames.iter().find_map(|f| f.embedding.as_ref().map(Vec::len))
    }
}

/// Parsed monitor output for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub episode_id: String,
    pub timestep: u64,
    pub per_object: Vec<(String, Classification)>,
    pub overall: Classification,
    pub rationale: String,
}

/// One record of a verdict file: a parsed verdict or a withheld one.
///
/// Withheld outcomes are kept so that reports can count them instead of
/// coercing them to either class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FrameVerdict {
    Ok(MonitorVerdict),
    Unparseable { episode_id: String, timestep: u64, rationale: String, reason: String },
    Failed { episode_id: String, timestep: u64, message: String },
}

impl FrameVerdict {
    pub fn episode_id(&self) -> &str {
        match self {
            FrameVerdict::Ok(v) => &v.episode_id,
            FrameVerdict::Unparseable { episode_id, .. } | FrameVerdict::Failed { episode_id, .. } => episode_id,
        }
    }

    pub fn timestep(&self) -> u64 {
        match self {
            FrameVerdict::Ok(v) => v.timestep,
            FrameVerdict::Unparseable { timestep, .. } | FrameVerdict::Failed { timestep, .. } => *timestep,
        }
    }

    /// The overall classification, or `None` when the verdict was withheld.
    pub fn overall(&self) -> Option<Classification> {
        match self {
            FrameVerdict::Ok(v) => Some(v.overall),
            _ => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, FrameVerdict::Failed { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.display().to_string(), source }
}

/// Write records as JSON lines.
pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), PersistError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| PersistError::Serialize(e.to_string()))?;
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Append records to a JSON-lines file, creating it if needed.
pub fn append_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), PersistError> {
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| PersistError::Serialize(e.to_string()))?;
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Read JSON lines, skipping blank lines. Errors carry 1-indexed line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PersistError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| PersistError::Malformed { line: idx + 1, message: e.to_string() })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_episodes(episodes: &[Episode], path: &Path) -> Result<(), PersistError> {
    for episode in episodes {
        for frame in &episode.frames {
            let finite = frame.embedding.iter().flatten().all(|v| v.is_finite())
                && frame.external_scores.iter().flat_map(|m| m.values()).all(|v| v.is_finite());
            if !finite {
                return Err(PersistError::NonFiniteEmbedding {
                    episode_id: episode.id.clone(),
                    timestep: frame.timestep,
                });
            }
        }
    }
    write_jsonl(episodes, path)
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>, PersistError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut episodes = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        episodes.push(parse_episode_line(&line, idx + 1)?);
    }
    Ok(episodes)
}

/// Parse one episode record, separating malformed syntax from invariant
/// violations so the latter can name the episode.
fn parse_episode_line(line: &str, lineno: usize) -> Result<Episode, PersistError> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| PersistError::Malformed { line: lineno, message: e.to_string() })?;
    let episode_id = value.get("id").and_then(|v| v.as_str()).unwrap_or("<unknown>").to_string();
    let raw: RawEpisode = serde_json::from_value(value)
        .map_err(|e| PersistError::Malformed { line: lineno, message: e.to_string() })?;
    Episode::try_from(raw).map_err(|source| PersistError::Invalid { line: lineno, episode_id, source })
}

pub fn write_verdicts(verdicts: &[FrameVerdict], path: &Path) -> Result<(), PersistError> {
    write_jsonl(verdicts, path)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<FrameVerdict>, PersistError> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(label: &str, predicate: &str) -> Detection {
        Detection::new(label, predicate, 0.9).unwrap()
    }

    fn two_frame_episode() -> Episode {
        Episode::builder("ep-1", ScenarioClass::AnomalousLight)
            .frames(vec![
                Frame::at(0, vec![det("car", "on the road")]),
                Frame::at(1, vec![det("traffic light", "on a truck")]).with_embedding(vec![0.5, -1.25]),
            ])
            .intervals(vec![VisibilityInterval::new(1, 1, AnomalyKind::TrafficLight).unwrap()])
            .build()
            .unwrap()
    }

    #[test]
    fn empty_list_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        write_episodes(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert!(read_episodes(&path).unwrap().is_empty());
    }

    #[test]
    fn two_frames_one_line_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let episodes = vec![two_frame_episode()];
        write_episodes(&episodes, &a).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back = read_episodes(&a).unwrap();
        assert_eq!(back, episodes);
        write_episodes(&back, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn inverted_interval_rejected() {
        assert_eq!(
            VisibilityInterval::new(5, 3, AnomalyKind::StopSign),
            Err(ValidationError::IntervalInverted { start: 5, end: 3 })
        );
        let line = r#"{"id":"x","scenario_class":"anomalous_stop","frames":[{"timestep":0,"time_s":0.0,"detections":[]},{"timestep":9,"time_s":4.5,"detections":[]}],"anomaly_intervals":[{"start":5,"end":3,"anomaly_kind":"stop_sign"}]}"#;
        let err = parse_episode_line(line, 1).unwrap_err();
        assert!(
            matches!(
                err,
                PersistError::Invalid { ref episode_id, source: ValidationError::IntervalInverted { start: 5, end: 3 }, .. }
                    if episode_id == "x"
            ),
            "{err}"
        );
    }

    #[test]
    fn unknown_scenario_class_names_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, "\n{\"id\":\"x\",\"scenario_class\":\"haunted_bridge\",\"frames\":[]}\n").unwrap();
        let err = read_episodes(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("haunted_bridge"), "{msg}");
    }

    #[test]
    fn overlapping_intervals_name_episode() {
        let frames: Vec<Frame> = (0..10).map(|t| Frame::at(t, vec![])).collect();
        let overlapping = Episode::builder("ep-overlap", ScenarioClass::StrangeObject)
            .frames(frames)
            .intervals(vec![
                VisibilityInterval::new(2, 5, AnomalyKind::StrangeObject).unwrap(),
                VisibilityInterval::new(5, 7, AnomalyKind::StrangeObject).unwrap(),
            ]);
        assert!(matches!(overlapping.clone().build(), Err(ValidationError::IntervalOrder { .. })));

        let mut value = serde_json::to_value(
            Episode::builder("ep-overlap", ScenarioClass::StrangeObject)
                .frames((0..10).map(|t| Frame::at(t, vec![])).collect())
                .build()
                .unwrap(),
        )
        .unwrap();
        value["anomaly_intervals"] = serde_json::json!([
            {"start": 2, "end": 5, "anomaly_kind": "strange_object"},
            {"start": 4, "end": 7, "anomaly_kind": "strange_object"}
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, format!("{value}\n")).unwrap();
        match read_episodes(&path).unwrap_err() {
            PersistError::Invalid { line, episode_id, source } => {
                assert_eq!(line, 1);
                assert_eq!(episode_id, "ep-overlap");
                assert!(matches!(source, ValidationError::IntervalOrder { .. }));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn nan_embedding_rejected_on_write() {
        let episode = Episode::builder("nan", ScenarioClass::NominalStop)
            .frames(vec![Frame::at(0, vec![]).with_embedding(vec![1.0, f64::NAN])])
            .build()
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = write_episodes(&[episode], &dir.path().join("e.jsonl")).unwrap_err();
        assert!(matches!(err, PersistError::NonFiniteEmbedding { timestep: 0, .. }));
    }

    #[test]
    fn constructor_errors() {
        assert_eq!(Detection::new(" ", "", 0.5), Err(ValidationError::EmptyLabel));
        assert_eq!(Detection::new("car", "", 1.5), Err(ValidationError::ConfidenceOutOfRange(1.5)));
        assert!(Frame::new(0, -1.0, vec![]).is_err());
        let unordered = Episode::builder("u", ScenarioClass::NominalLight)
            .frames(vec![Frame::at(3, vec![]), Frame::at(3, vec![])])
            .build();
        assert!(matches!(unordered, Err(ValidationError::TimestepOrder { .. })));
        let ragged = Episode::builder("r", ScenarioClass::NominalLight)
            .frames(vec![
                Frame::at(0, vec![]).with_embedding(vec![1.0]),
                Frame::at(1, vec![]).with_embedding(vec![1.0, 2.0]),
            ])
            .build();
        assert!(matches!(ragged, Err(ValidationError::EmbeddingLength { .. })));
        let nominal_with_interval = Episode::builder("n", ScenarioClass::NominalStop)
            .frames(vec![Frame::at(0, vec![])])
            .intervals(vec![VisibilityInterval::new(0, 0, AnomalyKind::StopSign).unwrap()])
            .build();
        assert!(matches!(nominal_with_interval, Err(ValidationError::UnexpectedInterval { .. })));
        let outside = Episode::builder("o", ScenarioClass::AnomalousStop)
            .frames(vec![Frame::at(0, vec![]), Frame::at(1, vec![])])
            .intervals(vec![VisibilityInterval::new(1, 2, AnomalyKind::StopSign).unwrap()])
            .build();
        assert!(matches!(outside, Err(ValidationError::IntervalOutOfRange { .. })));
    }

    #[test]
    fn verdict_records_round_trip() {
        let verdicts = vec![
            FrameVerdict::Ok(MonitorVerdict {
                episode_id: "e".into(),
                timestep: 3,
                per_object: vec![("Car on the road".into(), Classification::Normal)],
                overall: Classification::Normal,
                rationale: "Car on the road:\nClassification: Normal.".into(),
            }),
            FrameVerdict::Unparseable {
                episode_id: "e".into(),
                timestep: 4,
                rationale: "hmm".into(),
                reason: "no overall".into(),
            },
            FrameVerdict::Failed { episode_id: "e".into(), timestep: 5, message: "timeout".into() },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        write_verdicts(&verdicts, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().starts_with("{\"status\":\"ok\""));
        assert_eq!(read_verdicts(&path).unwrap(), verdicts);
    }
}
