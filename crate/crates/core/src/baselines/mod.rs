//! Classical OOD detectors over frame embeddings: PCA reduction, a
//! Gaussian mixture scored by likelihood or Mahalanobis distance, linear
//! reconstruction error, and quantile threshold calibration.

pub mod calibrate;
pub mod gmm;
pub mod pca;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibrate::{calibrate, order_statistic_rank, CalibratedDetector};
pub use gmm::{fit_gmm, select_components, GaussianMixtureModel, GmmFitOptions};
pub use pca::{fit_pca, PcaModel};

use crate::episodes::{Episode, Frame};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("need at least {need} vectors, got {got}")]
    InsufficientData { got: usize, need: usize },
    #[error("component count {k} outside 1..={max}")]
    ComponentsOutOfRange { k: usize, max: usize },
    #[error("input vectors have no variance")]
    Degenerate,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("covariance of component {component} is not positive definite")]
    NotPositiveDefinite { component: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("no calibration scores")]
    EmptyScores,
    #[error("quantile {0} outside (0, 1)")]
    QuantileOutOfRange(f64),
    #[error("unknown score kind `{0}`")]
    UnknownScoreKind(String),
    #[error("score kind {0} needs a fitted mixture")]
    MissingMixture(ScoreKind),
    #[error("score kind {0} needs a fitted model")]
    MissingModel(ScoreKind),
    #[error("episode {episode_id} timestep {timestep}: no embedding")]
    MissingEmbedding { episode_id: String, timestep: u64 },
    #[error("episode {episode_id} timestep {timestep}: no external score `{name}`")]
    MissingExternalScore { episode_id: String, timestep: u64, name: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// The scalar OOD signal a detector thresholds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    GmmNll,
    MahalanobisMin,
    ReconError,
    /// A precomputed per-frame score read from `Frame::external_scores`.
    External(String),
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreKind::GmmNll => f.write_str("gmm_nll"),
            ScoreKind::MahalanobisMin => f.write_str("mahalanobis_min"),
            ScoreKind::ReconError => f.write_str("recon_error"),
            ScoreKind::External(name) => write!(f, "external:{name}"),
        }
    }
}

impl FromStr for ScoreKind {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gmm_nll" => Ok(ScoreKind::GmmNll),
            "mahalanobis_min" => Ok(ScoreKind::MahalanobisMin),
            "recon_error" => Ok(ScoreKind::ReconError),
            other => match other.strip_prefix("external:") {
                Some(name) if !name.is_empty() => Ok(ScoreKind::External(name.to_string())),
                _ => Err(BaselineError::UnknownScoreKind(other.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Reduced dimension; clamped to what the data supports.
    pub pca_dim: usize,
    /// Mixture components; 0 skips the mixture.
    pub components: usize,
    pub gmm: GmmFitOptions,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { pca_dim: 32, components: 5, gmm: GmmFitOptions::default() }
    }
}

/// PCA reduction plus an optional mixture in the reduced coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineModel {
    pub pca: PcaModel,
    pub gmm: Option<GaussianMixtureModel>,
}

pub fn fit_baseline(vectors: &[Vec<f64>], config: &BaselineConfig) -> Result<BaselineModel, BaselineError> {
    let n = vectors.len();
    if n < 2 {
        return Err(BaselineError::InsufficientData { got: n, need: 2 });
    }
    let d = vectors[0].len();
    let k = config.pca_dim.min(d).min(n - 1);
    if k < config.pca_dim {
        tracing::warn!(requested = config.pca_dim, used = k, "PCA dimension clamped to the data");
    }
    let pca = fit_pca(vectors, k)?;
    let gmm = if config.components == 0 {
        None
    } else {
        let reduced: Vec<Vec<f64>> =
            vectors.iter().map(|v| pca.project(v).map(|z| z.iter().copied().collect())).collect::<Result<_, _>>()?;
        Some(fit_gmm(&reduced, config.components, config.gmm)?)
    };
    Ok(BaselineModel { pca, gmm })
}

impl BaselineModel {
    pub fn score(&self, kind: &ScoreKind, embedding: &[f64]) -> Result<f64, BaselineError> {
        match kind {
            ScoreKind::ReconError => self.pca.recon_error(embedding),
            ScoreKind::GmmNll | ScoreKind::MahalanobisMin => {
                let gmm = self.gmm.as_ref().ok_or_else(|| BaselineError::MissingMixture(kind.clone()))?;
                let z: Vec<f64> = self.pca.project(embedding)?.iter().copied().collect();
                match kind {
                    ScoreKind::GmmNll => gmm.score_nll(&z),
                    _ => gmm.score_mahalanobis_min(&z),
                }
            }
            ScoreKind::External(_) => Err(BaselineError::UnknownScoreKind(kind.to_string())),
        }
    }
}

/// Score one frame. External scores are read from the frame; every other
/// kind needs a model and the frame's embedding.
pub fn score_frame(
    kind: &ScoreKind,
    model: Option<&BaselineModel>,
    episode_id: &str,
    frame: &Frame,
) -> Result<f64, BaselineError> {
    if let ScoreKind::External(name) = kind {
        return frame.external_scores.as_ref().and_then(|s| s.get(name)).copied().ok_or_else(|| {
            BaselineError::MissingExternalScore { episode_id: episode_id.to_string(), timestep: frame.timestep(), name: name.clone() }
        });
    }
    let model = model.ok_or_else(|| BaselineError::MissingModel(kind.clone()))?;
    let embedding = frame
        .embedding
        .as_deref()
        .ok_or_else(|| BaselineError::MissingEmbedding { episode_id: episode_id.to_string(), timestep: frame.timestep() })?;
    model.score(kind, embedding)
}

/// Every frame embedding of the given episodes, in order.
pub fn collect_embeddings<'a>(episodes: impl IntoIterator<Item = &'a Episode>) -> Result<Vec<Vec<f64>>, BaselineError> {
    let mut out = Vec::new();
    for episode in episodes {
        for frame in episode.frames() {
            let embedding = frame.embedding.clone().ok_or_else(|| BaselineError::MissingEmbedding {
                episode_id: episode.id().to_string(),
                timestep: frame.timestep(),
            })?;
            out.push(embedding);
        }
    }
    Ok(out)
}

/// Model types that can be stored in a versioned model file.
pub trait ModelFile: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

impl ModelFile for BaselineModel {
    const KIND: &'static str = "baseline";
}

impl ModelFile for CalibratedDetector {
    const KIND: &'static str = "calibrated_detector";
}

impl ModelFile for PcaModel {
    const KIND: &'static str = "pca";
}

impl ModelFile for GaussianMixtureModel {
    const KIND: &'static str = "gmm";
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    model: T,
}

pub fn write_model<T: ModelFile>(model: &T, path: &Path) -> Result<(), BaselineError> {
    let envelope = Envelope { format_version: MODEL_FORMAT_VERSION, kind: T::KIND.to_string(), model };
    let text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| BaselineError::Format { path: path.display().to_string(), message: e.to_string() })?;
    std::fs::write(path, text + "\n").map_err(|source| BaselineError::Io { path: path.display().to_string(), source })
}

pub fn read_model<T: ModelFile>(path: &Path) -> Result<T, BaselineError> {
    let text = std::fs::read_to_string(path).map_err(|source| BaselineError::Io { path: path.display().to_string(), source })?;
    let format = |message: String| BaselineError::Format { path: path.display().to_string(), message };
    let header: serde_json::Value = serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
    match header.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
        Some(v) => return Err(format(format!("unsupported format_version {v}"))),
        None => return Err(format("missing format_version".into())),
    }
    match header.get("kind").and_then(serde_json::Value::as_str) {
        Some(kind) if kind == T::KIND => {}
        other => return Err(format(format!("expected a {} model, found {:?}", T::KIND, other))),
    }
    let envelope: Envelope<T> = serde_json::from_value(header).map_err(|e| format(e.to_string()))?;
    Ok(envelope.model)
}
