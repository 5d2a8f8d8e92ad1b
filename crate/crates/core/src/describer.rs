//! Scene descriptions: detections rendered as natural-language lines.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::{Detection, Frame};

const DEFAULT_VOCABULARY: &str = include_str!("../../../fixtures/vocabulary.toml");

#[derive(Debug, Error)]
pub enum VocabularyError {
    #[error("vocabulary has no objects")]
    NoObjects,
    #[error("nominal_subset entry `{0}` is not among the objects")]
    NotAnObject(String),
    #[error("cannot read vocabulary {path}: {message}")]
    Load { path: String, message: String },
}

/// Object labels, predicate phrases and the background-scenery subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary")]
pub struct Vocabulary {
    objects: Vec<String>,
    predicates: Vec<String>,
    nominal_subset: Vec<String>,
}

#[derive(Deserialize)]
struct RawVocabulary {
    objects: Vec<String>,
    #[serde(default)]
    predicates: Vec<String>,
    #[serde(default)]
    nominal_subset: Vec<String>,
}

impl TryFrom<RawVocabulary> for Vocabulary {
    type Error = VocabularyError;

    fn try_from(raw: RawVocabulary) -> Result<Self, Self::Error> {
        Vocabulary::new(raw.objects, raw.predicates, raw.nominal_subset)
    }
}

impl Vocabulary {
    pub fn new(
        objects: Vec<String>,
        predicates: Vec<String>,
        nominal_subset: Vec<String>,
    ) -> Result<Self, VocabularyError> {
        if objects.is_empty() {
            return Err(VocabularyError::NoObjects);
        }
        if let Some(missing) = nominal_subset.iter().find(|n| !objects.contains(n)) {
            return Err(VocabularyError::NotAnObject(missing.clone()));
        }
        Ok(Self { objects, predicates, nominal_subset })
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn predicates(&self) -> &[String] {
        &self.predicates
    }

    pub fn nominal_subset(&self) -> &[String] {
        &self.nominal_subset
    }

    pub fn contains(&self, label: &str) -> bool {
        self.objects.iter().any(|o| o == label)
    }
}

/// The driving and manipulation vocabularies shipped together in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyCatalog {
    pub driving: Vocabulary,
    pub manipulation: Vocabulary,
}

impl VocabularyCatalog {
    pub fn from_toml(text: &str) -> Result<Self, VocabularyError> {
        toml::from_str(text).map_err(|e| VocabularyError::Load { path: "<inline>".into(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, VocabularyError> {
        let load_err = |message: String| VocabularyError::Load { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        toml::from_str(&text).map_err(|e| load_err(e.to_string()))
    }
}

impl Default for VocabularyCatalog {
    fn default() -> Self {
        Self::from_toml(DEFAULT_VOCABULARY).expect("bundled vocabulary is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrderPolicy {
    #[default]
    AsDetected,
    Lexicographic,
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub lines: Vec<String>,
    pub order_policy: OrderPolicy,
    /// Labels rendered verbatim because the vocabulary does not list them.
    #[serde(default)]
    pub unknown_labels: usize,
}

impl SceneDescription {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Bullet list used as the prompt binding: one `- <line>` per line.
    pub fn to_prompt_text(&self) -> String {
        self.lines.iter().map(|l| format!("- {l}")).collect::<Vec<_>>().join("\n")
    }
}

/// "an" before a vowel-initial word, "a" otherwise.
pub fn article(label: &str) -> &'static str {
    match label.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// "a(n) <label> <predicate>", predicate omitted when empty.
pub fn phrase(label: &str, predicate: &str) -> String {
    let predicate = predicate.trim();
    if predicate.is_empty() {
        format!("{} {label}", article(label))
    } else {
        format!("{} {label} {predicate}", article(label))
    }
}

/// Strip list markers, count suffix and leading article from a rendered line,
/// leaving "<label> <predicate>".
pub fn strip_line(line: &str) -> &str {
    let mut s = line.trim();
    s = s.strip_prefix('-').unwrap_or(s).trim_start();
    if let Some(open) = s.rfind(" (") {
        let tail = &s[open + 2..];
        if tail.ends_with("x)") && tail[..tail.len() - 2].chars().all(|c| c.is_ascii_digit()) {
            s = &s[..open];
        }
    }
    for art in ["an ", "a "] {
        if let Some(rest) = s.strip_prefix(art) {
            return rest;
        }
    }
    s
}

pub fn describe(frame: &Frame, vocab: &Vocabulary, order_policy: OrderPolicy) -> SceneDescription {
    describe_detections(&frame.detections, vocab, order_policy)
}

pub fn describe_detections(
    detections: &[Detection],
    vocab: &Vocabulary,
    order_policy: OrderPolicy,
) -> SceneDescription {
    // Collapse duplicate (label, predicate) pairs, keeping first-seen order.
    let mut order: Vec<(&str, &str)> = Vec::new();
    let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
    let mut unknown = BTreeSet::new();
    for d in detections {
        let key = (d.label(), d.predicate().trim());
        if !vocab.contains(d.label()) {
            unknown.insert(d.label());
        }
        let count = counts.entry(key).or_insert(0);
        if *count == 0 {
            order.push(key);
        }
        *count += 1;
    }
    if !unknown.is_empty() {
        tracing::warn!(count = unknown.len(), labels = ?unknown, "labels outside the vocabulary passed through");
    }
    let mut lines: Vec<String> = order
        .into_iter()
        .map(|key| match counts[&key] {
            1 => phrase(key.0, key.1),
            n => format!("{} ({n}x)", phrase(key.0, key.1)),
        })
        .collect();
    match order_policy {
        OrderPolicy::AsDetected => {}
        OrderPolicy::Lexicographic => lines.sort(),
        OrderPolicy::Shuffled { seed } => shuffle(&mut lines, seed),
    }
    SceneDescription { lines, order_policy, unknown_labels: unknown.len() }
}

fn shuffle(lines: &mut [String], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lines.shuffle(&mut rng);
}

/// Reorder a description's lines by a seeded permutation; the line multiset
/// is unchanged.
pub fn permute_description(desc: &SceneDescription, seed: u64) -> SceneDescription {
    let mut lines = desc.lines.clone();
    shuffle(&mut lines, seed);
    SceneDescription { lines, order_policy: OrderPolicy::Shuffled { seed }, unknown_labels: desc.unknown_labels }
}
