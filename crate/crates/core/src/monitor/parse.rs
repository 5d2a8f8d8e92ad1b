//! Response parsing anchored on the templates' literal section labels.
//!
//! Few-shot driving responses carry one `<object>:` block per object ending
//! in `Classification: Normal.|Anomaly.` and a final
//! `Overall Scenario Classification:` line. Zero-shot manipulation responses
//! carry per-object `Misidentifiable as Block/Bowl (yes or no):` answers and
//! a final `Misidentifiable Objects Present (yes or no):` line.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::episodes::{Classification, MonitorVerdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("response is empty")]
    Empty,
    #[error("no overall classification line ({objects} per-object classification(s) found)")]
    MissingOverall { objects: usize },
    #[error("line {line}: unrecognized classification `{value}`")]
    InvalidClassification { line: usize, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParseOptions {
    /// When no overall line exists, scan the final three lines for
    /// "anomaly"/"abnormal" instead of failing.
    pub keyword_fallback: bool,
}

struct Patterns {
    overall: Regex,
    classification: Regex,
    objects_present: Regex,
    misidentifiable_as: Regex,
    numbered: Regex,
}

fn patterns() -> &'static Patterns {
    static PATTERNS: OnceLock<Patterns> = OnceLock::new();
    PATTERNS.get_or_init(|| Patterns {
        overall: Regex::new(r"(?i)^overall scenario classification\s*:\s*([a-z]*)\s*\.?\s*$").unwrap(),
        classification: Regex::new(r"(?i)^classification\s*:\s*([a-z]*)\s*\.?\s*$").unwrap(),
        objects_present: Regex::new(r"(?i)^misidentifiable objects present\s*(?:\(yes or no\))?\s*:\s*([a-z]*)").unwrap(),
        misidentifiable_as: Regex::new(r"(?i)^misidentifiable as (?:block|bowl)\s*(?:\(yes or no\))?\s*:\s*([a-z]*)").unwrap(),
        numbered: Regex::new(r"^\d+\.").unwrap(),
    })
}

const FIELD_PREFIXES: [&str; 5] =
    ["overall scenario classification", "classification", "misidentifiable", "object description", "object similarity"];

fn object_header(line: &str) -> Option<&str> {
    let name = line.strip_suffix(':')?.trim();
    if name.is_empty() || name.contains(':') || patterns().numbered.is_match(name) {
        return None;
    }
    let lower = name.to_ascii_lowercase();
    if FIELD_PREFIXES.iter().any(|p| lower.starts_with(p)) {
        return None;
    }
    Some(name)
}

fn classification(value: &str, line: usize) -> Result<Classification, ParseError> {
    match value.to_ascii_lowercase().as_str() {
        "normal" => Ok(Classification::Normal),
        "anomaly" => Ok(Classification::Anomaly),
        _ => Err(ParseError::InvalidClassification { line, value: value.to_string() }),
    }
}

fn yes_no(value: &str, line: usize) -> Result<bool, ParseError> {
    match value.to_ascii_lowercase().as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(ParseError::InvalidClassification { line, value: value.to_string() }),
    }
}

#[derive(Default)]
struct OpenObject {
    name: String,
    misidentifiable: Option<bool>,
}

pub fn parse_verdict(text: &str, episode_id: &str, timestep: u64) -> Result<MonitorVerdict, ParseError> {
    parse_verdict_with(text, episode_id, timestep, ParseOptions::default())
}

pub fn parse_verdict_with(
    text: &str,
    episode_id: &str,
    timestep: u64,
    options: ParseOptions,
) -> Result<MonitorVerdict, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let p = patterns();
    let mut per_object = Vec::new();
    let mut open: Option<OpenObject> = None;
    let mut overall = None;

    let close = |open: &mut Option<OpenObject>, per_object: &mut Vec<(String, Classification)>| {
        if let Some(OpenObject { name, misidentifiable: Some(flag) }) = open.take() {
            let class = if flag { Classification::Anomaly } else { Classification::Normal };
            per_object.push((name, class));
        }
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if let Some(c) = p.overall.captures(line) {
            close(&mut open, &mut per_object);
            overall = Some(classification(&c[1], lineno)?);
        } else if let Some(c) = p.objects_present.captures(line) {
            close(&mut open, &mut per_object);
            let flagged = yes_no(&c[1], lineno)?;
            overall = Some(if flagged { Classification::Anomaly } else { Classification::Normal });
        } else if let Some(c) = p.classification.captures(line) {
            let class = classification(&c[1], lineno)?;
            if let Some(obj) = open.take() {
                per_object.push((obj.name, class));
            }
        } else if let Some(c) = p.misidentifiable_as.captures(line) {
            let flag = yes_no(&c[1], lineno)?;
            if let Some(obj) = open.as_mut() {
                obj.misidentifiable = Some(obj.misidentifiable.unwrap_or(false) || flag);
            }
        } else if let Some(name) = object_header(line) {
            close(&mut open, &mut per_object);
            open = Some(OpenObject { name: name.to_string(), misidentifiable: None });
        }
    }
    close(&mut open, &mut per_object);

    let overall = match overall {
        Some(c) => c,
        None if options.keyword_fallback => {
            let tail: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let start = tail.len().saturating_sub(3);
            let flagged = tail[start..].iter().any(|l| {
                let l = l.to_ascii_lowercase();
                l.contains("anomaly") || l.contains("abnormal")
            });
            if flagged {
                Classification::Anomaly
            } else {
                Classification::Normal
            }
        }
        None => return Err(ParseError::MissingOverall { objects: per_object.len() }),
    };
    Ok(MonitorVerdict {
        episode_id: episode_id.to_string(),
        timestep,
        per_object,
        overall,
        rationale: text.to_string(),
    })
}
