//! Prompt templates with `{placeholder}` slots.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DRIVING_FEWSHOT: &str = include_str!("../../../../templates/driving_fewshot.txt");
const MANIP_ZEROSHOT: &str = include_str!("../../../../templates/manip_zeroshot.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template body is empty")]
    EmptyBody,
    #[error("required placeholder `{0}` does not occur in the template body")]
    UndeclaredPlaceholder(String),
    #[error("missing binding for placeholder `{0}`")]
    MissingBinding(String),
    #[error("binding `{0}` does not match any placeholder")]
    UnknownBinding(String),
    #[error("cannot read template {path}: {message}")]
    Load { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStyle {
    FewShotCot,
    ZeroShotCot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    required_placeholders: BTreeSet<String>,
    style: TemplateStyle,
}

/// Byte ranges and names of `{identifier}` slots in a body.
fn placeholder_spans(body: &str) -> Vec<(usize, usize, &str)> {
    let bytes = body.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            let ident_ok = j > start && !bytes[start].is_ascii_digit();
            if ident_ok && j < bytes.len() && bytes[j] == b'}' {
                spans.push((i, j + 1, &body[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    spans
}

impl PromptTemplate {
    /// Template whose required placeholders are every slot found in `body`.
    pub fn new(name: impl Into<String>, body: impl Into<String>, style: TemplateStyle) -> Result<Self, TemplateError> {
        let body = body.into();
        let required = placeholder_spans(&body).into_iter().map(|(_, _, n)| n.to_string()).collect();
        Self::with_required(name, body, required, style)
    }

    pub fn with_required(
        name: impl Into<String>,
        body: impl Into<String>,
        required_placeholders: BTreeSet<String>,
        style: TemplateStyle,
    ) -> Result<Self, TemplateError> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(TemplateError::EmptyBody);
        }
        let present: BTreeSet<&str> = placeholder_spans(&body).into_iter().map(|(_, _, n)| n).collect();
        if let Some(missing) = required_placeholders.iter().find(|p| !present.contains(p.as_str())) {
            return Err(TemplateError::UndeclaredPlaceholder(missing.clone()));
        }
        Ok(Self { name: name.into(), body, required_placeholders, style })
    }

    /// Load a plain-text template. The name is the file stem; one trailing
    /// newline is dropped so the body ends where the file's text ends.
    pub fn load(path: &Path, style: Option<TemplateStyle>) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Load { path: path.display().to_string(), message: e.to_string() })?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("template").to_string();
        let style = style.unwrap_or(if name.contains("zeroshot") || name.contains("zero_shot") {
            TemplateStyle::ZeroShotCot
        } else {
            TemplateStyle::FewShotCot
        });
        Self::new(name, strip_final_newline(&text), style)
    }

    /// Few-shot driving monitor template.
    pub fn driving() -> Self {
        Self::new("driving_fewshot", strip_final_newline(DRIVING_FEWSHOT), TemplateStyle::FewShotCot)
            .expect("bundled template is valid")
    }

    /// Zero-shot manipulation monitor template.
    pub fn manipulation() -> Self {
        Self::new("manip_zeroshot", strip_final_newline(MANIP_ZEROSHOT), TemplateStyle::ZeroShotCot)
            .expect("bundled template is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn style(&self) -> TemplateStyle {
        self.style
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required_placeholders
    }

    pub fn requires(&self, placeholder: &str) -> bool {
        self.required_placeholders.contains(placeholder)
    }
}

fn strip_final_newline(text: &str) -> &str {
    text.strip_suffix("\r\n").or_else(|| text.strip_suffix('\n')).unwrap_or(text)
}

/// Substitute every required placeholder in one pass. Bound values are
/// inserted verbatim and never rescanned; slots that are not required
/// placeholders are left untouched.
pub fn render_prompt(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    if let Some(unknown) = bindings.keys().find(|k| !template.required_placeholders.contains(*k)) {
        return Err(TemplateError::UnknownBinding(unknown.clone()));
    }
    if let Some(missing) = template.required_placeholders.iter().find(|p| !bindings.contains_key(*p)) {
        return Err(TemplateError::MissingBinding(missing.clone()));
    }
    let body = &template.body;
    let mut out = String::with_capacity(body.len() + bindings.values().map(String::len).sum::<usize>());
    let mut cursor = 0;
    for (start, end, name) in placeholder_spans(body) {
        if let Some(value) = bindings.get(name) {
            out.push_str(&body[cursor..start]);
            out.push_str(value);
            cursor = end;
        }
    }
    out.push_str(&body[cursor..]);
    Ok(out)
}
