//! Synthetic episode corpora for the driving and manipulation scenarios.
//!
//! Ground truth (detections, intervals, embeddings) is drawn from one RNG
//! stream and perception noise from another, so changing noise rates never
//! moves the ground truth.

pub mod catalog;
pub mod noise;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::describer::{Vocabulary, VocabularyCatalog, VocabularyError};
use crate::episodes::{
    Detection, Episode, Frame, ScenarioClass, TaskOutcome, ValidationError, VisibilityInterval,
};
use catalog::{DistractorRole, DISTRACTORS, TASK_COLORS};
pub use noise::{apply_noise, NoiseConfig, NoiseDecision, NoiseScope};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Vocabulary(#[from] VocabularyError),
    #[error("generated an invalid episode: {0}")]
    Validation(#[from] ValidationError),
}

/// Probability that the manipulation policy fails, per task variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManipFailureRates {
    pub baseline: f64,
    pub neutral: f64,
    pub semantic: f64,
}

impl Default for ManipFailureRates {
    fn default() -> Self {
        // Semantic and neutral rates follow the 136/250 and 114/250 failure
        // totals of the reference confusion matrices.
        Self { baseline: 0.30, neutral: 0.456, semantic: 0.544 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub counts: BTreeMap<ScenarioClass, usize>,
    /// Optional exact total of out-of-view frames per driving class; when
    /// absent every episode has `episode_length` frames.
    pub observations: BTreeMap<ScenarioClass, usize>,
    pub episode_length: usize,
    pub anomaly_window: (usize, usize),
    pub frame_period_s: f64,
    /// Embedding length; 0 disables embeddings.
    pub embedding_dim: usize,
    pub noise: NoiseConfig,
    pub manip_failure_rates: ManipFailureRates,
    pub vocabulary: Option<PathBuf>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            counts: BTreeMap::new(),
            observations: BTreeMap::new(),
            episode_length: 40,
            anomaly_window: (4, 12),
            frame_period_s: crate::episodes::DEFAULT_FRAME_PERIOD_S,
            embedding_dim: 64,
            noise: NoiseConfig::default(),
            manip_failure_rates: ManipFailureRates::default(),
            vocabulary: None,
        }
    }
}

impl GenConfig {
    pub fn from_toml(text: &str) -> Result<Self, GenError> {
        toml::from_str(text).map_err(|e| GenError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = std::fs::read_to_string(path).map_err(|e| GenError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        // Relative vocabulary paths resolve against the config's directory.
        if let (Some(vocab), Some(dir)) = (&config.vocabulary, path.parent()) {
            if vocab.is_relative() {
                config.vocabulary = Some(dir.join(vocab));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let (lo, hi) = self.anomaly_window;
        if lo == 0 || lo > hi {
            return Err(GenError::Config(format!("anomaly_window ({lo}, {hi}) must satisfy 1 <= min <= max")));
        }
        if hi >= self.episode_length {
            return Err(GenError::Config(format!(
                "anomaly_window max {hi} must be below episode_length {}",
                self.episode_length
            )));
        }
        if !(self.frame_period_s.is_finite() && self.frame_period_s > 0.0) {
            return Err(GenError::Config(format!("frame_period_s {} must be positive", self.frame_period_s)));
        }
        self.noise.validate().map_err(GenError::Config)?;
        let r = self.manip_failure_rates;
        if [r.baseline, r.neutral, r.semantic].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(GenError::Config("manip_failure_rates must lie in [0, 1]".into()));
        }
        for (class, &budget) in &self.observations {
            let count = self.counts.get(class).copied().unwrap_or(0);
            if class.is_manipulation() {
                return Err(GenError::Config(format!("observation budgets apply to driving classes, not {class}")));
            }
            if class.is_nominal() && budget < count {
                return Err(GenError::Config(format!("{class}: {budget} observations cannot cover {count} episodes")));
            }
            if count == 0 && budget > 0 {
                return Err(GenError::Config(format!("{class}: observation budget without episodes")));
            }
        }
        Ok(())
    }

    pub fn total_episodes(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Generate a corpus using the vocabulary named by the config (or the
/// bundled default).
pub fn generate(config: &GenConfig) -> Result<Vec<Episode>, GenError> {
    let catalog = match &config.vocabulary {
        Some(path) => VocabularyCatalog::load(path)?,
        None => VocabularyCatalog::default(),
    };
    generate_with(config, &catalog)
}

pub fn generate_with(config: &GenConfig, catalog: &VocabularyCatalog) -> Result<Vec<Episode>, GenError> {
    config.validate()?;
    let mut episodes = Vec::with_capacity(config.total_episodes());
    for (class_idx, class) in ScenarioClass::ALL.into_iter().enumerate() {
        let count = config.counts.get(&class).copied().unwrap_or(0);
        if count == 0 {
            continue;
        }
        let mut class_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, class_idx as u64, u64::MAX));
        let budgets = out_of_view_budgets(class, count, config, &mut class_rng);
        for (index, budget) in budgets.into_iter().enumerate() {
            let seed = mix(config.seed, class_idx as u64, index as u64);
            let id = format!("{}-{index:03}", class.as_str());
            let episode = if class.is_manipulation() {
                manipulation_episode(id, class, seed, config, &catalog.manipulation)?
            } else {
                driving_episode(id, class, budget, seed, config, &catalog.driving)?
            };
            episodes.push(episode);
        }
    }
    Ok(episodes)
}

/// SplitMix64 over the combined inputs; decorrelates per-episode streams.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Out-of-view frame count for each episode of a class.
fn out_of_view_budgets(class: ScenarioClass, count: usize, config: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match config.observations.get(&class) {
        Some(&total) => {
            let base = total / count;
            let mut budgets = vec![base; count];
            let mut idx: Vec<usize> = (0..count).collect();
            idx.shuffle(rng);
            for &i in idx.iter().take(total % count) {
                budgets[i] += 1;
            }
            budgets
        }
        // Filled in per episode once the interval length is known.
        None => vec![usize::MAX; count],
    }
}

#[derive(Debug, Clone)]
struct Track {
    id: usize,
    label: String,
    predicate: String,
    first: usize,
    last: usize,
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn confidence<R: Rng>(rng: &mut R) -> f64 {
    (rng.gen_range(0.35..0.98_f64) * 100.0).round() / 100.0
}

/// A window covering 30-70% of an episode.
fn random_window<R: Rng>(rng: &mut R, len: usize) -> (usize, usize) {
    let span = ((len as f64 * rng.gen_range(0.3..0.7)).round() as usize).clamp(1, len);
    let first = rng.gen_range(0..=len - span);
    (first, first + span - 1)
}

fn driving_episode(
    id: String,
    class: ScenarioClass,
    budget: usize,
    seed: u64,
    config: &GenConfig,
    vocab: &Vocabulary,
) -> Result<Episode, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = config.anomaly_window;
    let anomalous = !class.is_nominal();
    let interval_len = if anomalous { rng.gen_range(lo..=hi) } else { 0 };
    let out_of_view = if budget == usize::MAX { config.episode_length - interval_len } else { budget };
    let len = out_of_view + interval_len;
    let interval_start = if !anomalous {
        0
    } else if out_of_view >= 2 {
        rng.gen_range(1..out_of_view)
    } else {
        out_of_view
    };

    let mut tracks = Vec::new();
    let mut push_track = |label: &str, predicate: &str, first: usize, last: usize| {
        let id = tracks.len();
        tracks.push(Track { id, label: label.into(), predicate: predicate.into(), first, last });
    };
    let infrastructure = match class {
        ScenarioClass::NominalStop => Some(true),
        ScenarioClass::NominalLight => Some(false),
        _ if rng.gen_bool(0.5) => Some(rng.gen_bool(0.5)),
        _ => None,
    };
    if let Some(stop) = infrastructure {
        let (first, last) = random_window(&mut rng, len);
        if stop {
            push_track("stop sign", pick(&mut rng, &catalog::STOP_SIGN_PREDICATES), first, last);
        } else {
            push_track("traffic light", pick(&mut rng, &catalog::TRAFFIC_LIGHT_PREDICATES), first, last);
        }
    }
    if anomalous {
        let (first, last) = (interval_start, interval_start + interval_len - 1);
        match class {
            ScenarioClass::AnomalousStop => push_track("stop sign", catalog::BILLBOARD, first, last),
            ScenarioClass::AnomalousLight => {
                push_track("traffic light", "on a truck", first, last);
                push_track("truck", "on the road", first, last);
            }
            ScenarioClass::StrangeObject => {
                let object = pick(&mut rng, &catalog::STRANGE_OBJECTS);
                let predicate = pick(&mut rng, &catalog::STRANGE_OBJECT_PREDICATES);
                push_track(object, predicate, first, last);
            }
            _ => unreachable!("nominal classes handled above"),
        }
    }

    let background: Vec<&str> = vocab.nominal_subset().iter().map(String::as_str).collect();
    let predicates: Vec<&str> = catalog::BACKGROUND_PREDICATES
        .iter()
        .copied()
        .filter(|p| p.is_empty() || vocab.predicates().iter().any(|v| v == p))
        .collect();
    if background.is_empty() || predicates.is_empty() {
        return Err(GenError::Config("driving vocabulary lacks background objects or predicates".into()));
    }

    let mut embedder = Embedder::new(config.embedding_dim, &mut rng);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x6e_6f69_7365, 0));
    let mut decisions: HashMap<usize, NoiseDecision> = HashMap::new();
    let mut next_track = tracks.len();
    let mut frames = Vec::with_capacity(len);
    for t in 0..len {
        let mut truth: Vec<(usize, Detection)> = Vec::new();
        for _ in 0..rng.gen_range(1..=5) {
            let label = pick(&mut rng, &background);
            let predicate = pick(&mut rng, &predicates);
            truth.push((next_track, Detection::new(label, predicate, confidence(&mut rng))?));
            next_track += 1;
        }
        for track in tracks.iter().filter(|tr| (tr.first..=tr.last).contains(&t)) {
            let pos = rng.gen_range(0..=truth.len());
            let det = Detection::new(track.label.clone(), track.predicate.clone(), confidence(&mut rng))?;
            truth.insert(pos, (track.id, det));
        }
        let embedding = embedder.embed(truth.iter().map(|(_, d)| d), &mut rng);
        let detected = if config.noise.is_noise_free() {
            truth.into_iter().map(|(_, d)| d).collect()
        } else {
            let mut kept = Vec::with_capacity(truth.len());
            for (track, det) in &truth {
                let decision = match config.noise.scope {
                    NoiseScope::Track => decisions
                        .entry(*track)
                        .or_insert_with(|| NoiseDecision::draw(det, &config.noise, vocab, &mut noise_rng))
                        .clone(),
                    NoiseScope::Frame => NoiseDecision::draw(det, &config.noise, vocab, &mut noise_rng),
                };
                kept.extend(decision.apply(det));
            }
            kept
        };
        let mut frame = Frame::new(t as u64, t as f64 * config.frame_period_s, detected)?;
        frame.embedding = embedding;
        frames.push(frame);
    }

    let intervals = match class.anomaly_kind() {
        Some(kind) => vec![VisibilityInterval::new(
            interval_start as u64,
            (interval_start + interval_len - 1) as u64,
            kind,
        )?],
        None => Vec::new(),
    };
    Ok(Episode::builder(id, class).frames(frames).intervals(intervals).build()?)
}

fn manipulation_episode(
    id: String,
    class: ScenarioClass,
    seed: u64,
    config: &GenConfig,
    vocab: &Vocabulary,
) -> Result<Episode, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (block_color, bowl_color, distractor) = match class {
        ScenarioClass::ManipSemantic => {
            let semantic: Vec<_> = DISTRACTORS.iter().filter(|d| d.role != DistractorRole::Neutral).collect();
            let d = semantic[rng.gen_range(0..semantic.len())];
            let DistractorRole::Semantic { resembles, colors } = d.role else { unreachable!() };
            let matched = pick(&mut rng, colors);
            let other = loop {
                let c = pick(&mut rng, &TASK_COLORS);
                if c != matched {
                    break c;
                }
            };
            let (block, bowl) = match resembles {
                catalog::Resembles::Block => (matched, other),
                catalog::Resembles::Bowl => (other, matched),
            };
            (block, bowl, Some(d.label))
        }
        _ => {
            let block = pick(&mut rng, &TASK_COLORS);
            let bowl = loop {
                let c = pick(&mut rng, &TASK_COLORS);
                if c != block {
                    break c;
                }
            };
            let distractor = (class == ScenarioClass::ManipNeutral).then(|| {
                // Semantic objects double as neutral ones when their colors
                // do not match the task.
                let pool: Vec<_> = DISTRACTORS.iter().filter(|d| !d.confuses(block, bowl)).collect();
                pool[rng.gen_range(0..pool.len())].label
            });
            (block, bowl, distractor)
        }
    };

    let block_label = format!("{block_color} block");
    let bowl_label = format!("{bowl_color} bowl");
    let mut detections = Vec::new();
    for label in [&block_label, &block_label, &bowl_label, &bowl_label] {
        detections.push(Detection::new(label.as_str(), "", confidence(&mut rng))?);
    }
    if let Some(label) = distractor {
        let pos = rng.gen_range(0..=detections.len());
        detections.insert(pos, Detection::new(label, "", confidence(&mut rng))?);
    }
    let mut embedder = Embedder::new(config.embedding_dim, &mut rng);
    let embedding = embedder.embed(detections.iter(), &mut rng);
    if !config.noise.is_noise_free() {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x6e_6f69_7365, 0));
        let frame = Frame::at(0, detections);
        detections = apply_noise(&frame, &config.noise, vocab, &mut noise_rng).detections;
    }
    let failure_rate = match class {
        ScenarioClass::ManipBaseline => config.manip_failure_rates.baseline,
        ScenarioClass::ManipNeutral => config.manip_failure_rates.neutral,
        _ => config.manip_failure_rates.semantic,
    };
    let outcome = if rng.gen_bool(failure_rate) { TaskOutcome::Failure } else { TaskOutcome::Success };
    let mut frame = Frame::at(0, detections);
    frame.embedding = embedding;
    let intervals = match class.anomaly_kind() {
        Some(kind) => vec![VisibilityInterval::new(0, 0, kind)?],
        None => Vec::new(),
    };
    Ok(Episode::builder(id, class)
        .frames(vec![frame])
        .intervals(intervals)
        .task_outcome(Some(outcome))
        .task_spec(Some(catalog::task_spec(block_color, bowl_color)))
        .build()?)
}

/// Synthetic image features: each label and predicate owns a fixed random
/// direction; a scene embeds as their sum plus a per-episode offset
/// (map appearance) and per-frame jitter.
struct Embedder {
    dim: usize,
    offset: Vec<f64>,
    jitter: Normal<f64>,
    directions: HashMap<String, Vec<f64>>,
}

impl Embedder {
    const PREDICATE_WEIGHT: f64 = 0.3;

    fn new<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let offset_dist = Normal::new(0.0, 0.3).expect("valid std");
        let offset = (0..dim).map(|_| offset_dist.sample(rng)).collect();
        Self { dim, offset, jitter: Normal::new(0.0, 0.05).expect("valid std"), directions: HashMap::new() }
    }

    fn embed<'a, R: Rng>(&mut self, detections: impl Iterator<Item = &'a Detection>, rng: &mut R) -> Option<Vec<f64>> {
        if self.dim == 0 {
            return None;
        }
        let mut v = self.offset.clone();
        let dim = self.dim;
        for d in detections {
            let label = self.directions.entry(d.label().to_string()).or_insert_with(|| direction(d.label(), dim));
            for (acc, x) in v.iter_mut().zip(label.iter()) {
                *acc += x;
            }
            if !d.predicate().is_empty() {
                let predicate =
                    self.directions.entry(d.predicate().to_string()).or_insert_with(|| direction(d.predicate(), dim));
                for (acc, x) in v.iter_mut().zip(predicate.iter()) {
                    *acc += Self::PREDICATE_WEIGHT * x;
                }
            }
        }
        Some(v.into_iter().map(|x| ((x + self.jitter.sample(rng)) * 1e6).round() / 1e6).collect())
    }
}

/// Fixed pseudo-random direction for a phrase (FNV-1a seeded).
fn direction(phrase: &str, dim: usize) -> Vec<f64> {
    let hash = phrase.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(hash);
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}
