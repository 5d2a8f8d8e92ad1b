//! Deterministic rule-based stand-in for a language-model backend.
//!
//! The oracle reads the scene lines back out of a rendered prompt, classifies
//! each with an ordered rule list (first match wins) and answers in the
//! format the prompt's template asks for. Its outputs are exactly the
//! parser's inputs, so the monitoring pipeline runs end to end offline.

use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::{Backend, BackendError, BackendRequest, BackendResponse};
use crate::describer::strip_line;
use crate::episodes::{Classification, MonitorVerdict};
use crate::scenegen::catalog::{DistractorRole, Resembles, DISTRACTORS, STRANGE_OBJECTS};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("rule {index}: invalid {field} pattern `{pattern}`: {source}")]
    InvalidPattern { index: usize, field: &'static str, pattern: String, source: regex::Error },
    #[error("failed to read oracle rules {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed oracle rules: {0}")]
    Toml(#[from] toml::de::Error),
}

fn any_pattern() -> String {
    ".*".to_string()
}

fn anomaly() -> Classification {
    Classification::Anomaly
}

/// One classification rule. `label` and `predicate` must each match in full
/// (case-insensitive); `context`, when set, must match somewhere in the
/// prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub label: String,
    #[serde(default = "any_pattern")]
    pub predicate: String,
    #[serde(default)]
    pub context: Option<String>,
    #[serde(default = "anomaly")]
    pub classification: Classification,
}

impl Rule {
    pub fn anomaly(label: &str, predicate: &str) -> Self {
        Self { label: label.into(), predicate: predicate.into(), context: None, classification: Classification::Anomaly }
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = Some(context.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleOracleConfig {
    pub rules: Vec<Rule>,
    /// Applied to scene lines no rule matches.
    #[serde(default)]
    pub default: Classification,
    /// Lines introducing the scene list; the last occurrence in a prompt wins.
    #[serde(default = "default_markers")]
    pub scene_markers: Vec<String>,
}

fn default_markers() -> Vec<String> {
    vec!["I am driving on the road and I see:".into(), "On the table, the robot sees".into()]
}

impl RuleOracleConfig {
    /// Predicate hallucinations, displaced infrastructure and out-of-place
    /// objects.
    pub fn driving() -> Self {
        let strange = STRANGE_OBJECTS.join("|");
        Self {
            rules: vec![
                Rule::anomaly(".*", "on a billboard"),
                Rule::anomaly("traffic light|stop sign", "on a truck|on a trailer"),
                Rule::anomaly(&strange, ".*"),
            ],
            default: Classification::Normal,
            scene_markers: default_markers(),
        }
    }

    /// Distractors resembling the task's blocks or bowl, conditioned on the
    /// colors named in the prompt.
    pub fn manipulation() -> Self {
        let rules = DISTRACTORS
            .iter()
            .filter_map(|d| match d.role {
                DistractorRole::Neutral => None,
                DistractorRole::Semantic { resembles, colors } => {
                    let colors = colors.join("|");
                    let context = match resembles {
                        Resembles::Block => format!(r"put the (?:{colors}) blocks"),
                        Resembles::Bowl => format!(r"in an? (?:{colors}) bowl"),
                    };
                    Some(Rule::anomaly(&regex::escape(d.label), ".*").with_context(context))
                }
            })
            .collect();
        Self { rules, default: Classification::Normal, scene_markers: default_markers() }
    }

    /// Driving and manipulation rules together; the manipulation rules only
    /// fire on prompts naming a task.
    pub fn combined() -> Self {
        let mut config = Self::driving();
        config.rules.extend(Self::manipulation().rules);
        config
    }

    pub fn from_toml(text: &str) -> Result<Self, OracleError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| OracleError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }
}

#[derive(Debug)]
struct CompiledRule {
    object: Regex,
    context: Option<Regex>,
    classification: Classification,
}

/// Response layout requested by a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseStyle {
    /// Per-object question block ending in `Classification:`.
    PerObjectClassification,
    /// Per-object misidentification answers.
    Misidentification,
}

impl ResponseStyle {
    pub fn detect(prompt: &str) -> Self {
        if prompt.contains("Misidentifiable Objects Present") {
            ResponseStyle::Misidentification
        } else {
            ResponseStyle::PerObjectClassification
        }
    }
}

#[derive(Debug)]
pub struct RuleOracle {
    rules: Vec<CompiledRule>,
    default: Classification,
    markers: Vec<String>,
}

fn compile(index: usize, field: &'static str, pattern: &str) -> Result<Regex, OracleError> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .build()
        .map_err(|source| OracleError::InvalidPattern { index, field, pattern: pattern.to_string(), source })
}

impl RuleOracle {
    pub fn new(config: &RuleOracleConfig) -> Result<Self, OracleError> {
        let mut rules = Vec::with_capacity(config.rules.len());
        for (index, rule) in config.rules.iter().enumerate() {
            // Validate each part on its own so errors name the right field.
            compile(index, "label", &rule.label)?;
            compile(index, "predicate", &rule.predicate)?;
            let object = compile(index, "label", &format!(r"^(?:{})\s*(?:{})$", rule.label, rule.predicate))?;
            let context = rule.context.as_deref().map(|c| compile(index, "context", c)).transpose()?;
            rules.push(CompiledRule { object, context, classification: rule.classification });
        }
        Ok(Self { rules, default: config.default, markers: config.scene_markers.clone() })
    }

    /// Classify one "<label> <predicate>" phrase (article and list marker
    /// already stripped) against the prompt it came from.
    pub fn classify(&self, object: &str, prompt: &str) -> Classification {
        self.rules
            .iter()
            .find(|r| r.object.is_match(object) && r.context.as_ref().is_none_or(|c| c.is_match(prompt)))
            .map_or(self.default, |r| r.classification)
    }

    /// The bulleted scene lines following the last scene marker. Without a
    /// marker every bulleted line in the prompt counts.
    pub fn scene_lines<'p>(&self, prompt: &'p str) -> Vec<&'p str> {
        let lines: Vec<&str> = prompt.lines().collect();
        let start = lines
            .iter()
            .rposition(|l| self.markers.iter().any(|m| l.trim() == m.trim()))
            .map(|i| i + 1);
        match start {
            Some(start) => lines[start..].iter().take_while(|l| l.trim_start().starts_with('-')).copied().collect(),
            None => lines.into_iter().filter(|l| l.trim_start().starts_with('-')).collect(),
        }
    }

    /// The verdict the oracle would give, without a rationale.
    pub fn judge(&self, prompt: &str) -> (Vec<(String, Classification)>, Classification) {
        let per_object: Vec<(String, Classification)> = self
            .scene_lines(prompt)
            .into_iter()
            .map(|line| {
                let object = strip_line(line);
                (capitalize(object), self.classify(object, prompt))
            })
            .collect();
        let overall = if per_object.iter().any(|(_, c)| c.is_anomaly()) {
            Classification::Anomaly
        } else {
            Classification::Normal
        };
        (per_object, overall)
    }

    pub fn respond(&self, prompt: &str) -> String {
        let (per_object, overall) = self.judge(prompt);
        synthesize_response(&per_object, overall, ResponseStyle::detect(prompt))
    }
}

impl Backend for RuleOracle {
    fn name(&self) -> &str {
        "rule-oracle"
    }

    fn query(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        Ok(BackendResponse::text(self.respond(&request.prompt)))
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

const NORMAL_REASONING: &str = "1. Is this common to see while driving? Yes, this is a common sight while driving.
2. Can this influence the vehicle's behavior? Only in ways the vehicle is designed to handle.
3. Can the vehicle drive safely in its presence? Yes.
4. Can this cause the vehicle to make unpredictable or unsafe maneuvers? No.";

const ANOMALY_REASONING: &str = "1. Is this common to see while driving? No, this is unusual in this context.
2. Can this influence the vehicle's behavior? Yes, it may be mistaken for a relevant traffic element or obstruct the vehicle's path.
3. Can the vehicle drive safely in its presence? No, it could deceive the vehicle.
4. Can this cause the vehicle to make unpredictable or unsafe maneuvers? Yes.";

fn yes_no(flag: bool) -> &'static str {
    if flag {
        "yes"
    } else {
        "no"
    }
}

/// Render a response in the requested layout that parses back to exactly
/// `per_object` and `overall`.
pub fn synthesize_response(
    per_object: &[(String, Classification)],
    overall: Classification,
    style: ResponseStyle,
) -> String {
    let mut out = Vec::new();
    match style {
        ResponseStyle::PerObjectClassification => {
            for (object, class) in per_object {
                out.push(format!("{object}:"));
                out.push(if class.is_anomaly() { ANOMALY_REASONING } else { NORMAL_REASONING }.to_string());
                out.push(format!("Classification: {}.", class.title()));
            }
            out.push(format!("Overall Scenario Classification: {}.", overall.title()));
        }
        ResponseStyle::Misidentification => {
            for (object, class) in per_object {
                let flagged = class.is_anomaly();
                out.push(format!("{object}:"));
                out.push(format!("Object Description: {object}."));
                out.push(format!(
                    "Object Similarity with Block Shape (explain): {}",
                    if flagged { "Parts of it could pass for a block." } else { "Nothing notable." }
                ));
                out.push("Object Similarity with Block Color (explain): Compared against the task color.".into());
                out.push(format!("Misidentifiable as Block (yes or no): {}", yes_no(flagged)));
                out.push("Object Similarity with Bowl Shape (explain): Compared against the bowl shape.".into());
                out.push("Object Similarity with Bowl Color (explain): Compared against the task color.".into());
                out.push("Misidentifiable as Bowl (yes or no): no".into());
            }
            out.push(String::new());
            out.push(format!("Misidentifiable Objects Present (yes or no): {}", yes_no(overall.is_anomaly())));
        }
    }
    out.join("\n")
}

/// The verdict `synthesize_response` encodes, with the response as rationale.
pub fn synthesize_verdict(
    episode_id: &str,
    timestep: u64,
    per_object: Vec<(String, Classification)>,
    overall: Classification,
    style: ResponseStyle,
) -> MonitorVerdict {
    let rationale = synthesize_response(&per_object, overall, style);
    MonitorVerdict { episode_id: episode_id.to_string(), timestep, per_object, overall, rationale }
}
