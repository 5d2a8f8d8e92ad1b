//! Perception error model: predicate hallucinations, label swaps and
//! dropped detections.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::catalog::BILLBOARD;
use crate::describer::Vocabulary;
use crate::episodes::{Detection, Frame};

/// Whether noise decisions are redrawn every frame or held for an object's
/// whole track within an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    Frame,
    #[default]
    Track,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub billboard_hallucination_rate: f64,
    pub label_swap_rate: f64,
    pub dropout_rate: f64,
    pub scope: NoiseScope,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, rate) in [
            ("billboard_hallucination_rate", self.billboard_hallucination_rate),
            ("label_swap_rate", self.label_swap_rate),
            ("dropout_rate", self.dropout_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(format!("{name} = {rate} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn is_noise_free(&self) -> bool {
        self.billboard_hallucination_rate == 0.0 && self.label_swap_rate == 0.0 && self.dropout_rate == 0.0
    }
}

/// Detections whose predicate the detector tends to rewrite to "on a billboard".
pub fn billboard_eligible(label: &str) -> bool {
    matches!(label, "stop sign" | "traffic light")
}

/// The fate of one detection (or one track) under the noise model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NoiseDecision {
    pub dropped: bool,
    pub billboard: bool,
    pub swapped_label: Option<String>,
}

impl NoiseDecision {
    /// Draw a decision. Always consumes three uniforms (plus one index draw
    /// on a swap) so streams stay aligned across configurations.
    pub fn draw<R: Rng + ?Sized>(detection: &Detection, noise: &NoiseConfig, vocab: &Vocabulary, rng: &mut R) -> Self {
        let u_drop: f64 = rng.gen();
        let u_billboard: f64 = rng.gen();
        let u_swap: f64 = rng.gen();
        let billboard = billboard_eligible(detection.label())
            && detection.predicate() != BILLBOARD
            && u_billboard < noise.billboard_hallucination_rate;
        let swapped_label = if u_swap < noise.label_swap_rate {
            let candidates: Vec<&String> = vocab.objects().iter().filter(|o| *o != detection.label()).collect();
            (!candidates.is_empty()).then(|| candidates[rng.gen_range(0..candidates.len())].clone())
        } else {
            None
        };
        Self { dropped: u_drop < noise.dropout_rate, billboard, swapped_label }
    }

    pub fn apply(&self, detection: &Detection) -> Option<Detection> {
        if self.dropped {
            return None;
        }
        let mut out = detection.clone();
        if self.billboard {
            out = out.with_predicate(BILLBOARD);
        }
        if let Some(label) = &self.swapped_label {
            out = out.with_label(label.clone()).expect("vocabulary labels are nonempty");
        }
        Some(out)
    }
}

/// Apply independent per-detection noise to one frame. Embeddings and the
/// episode's ground truth are untouched.
pub fn apply_noise<R: Rng + ?Sized>(frame: &Frame, noise: &NoiseConfig, vocab: &Vocabulary, rng: &mut R) -> Frame {
    let mut out = frame.clone();
    out.detections = frame
        .detections
        .iter()
        .filter_map(|d| NoiseDecision::draw(d, noise, vocab, rng).apply(d))
        .collect();
    out
}
