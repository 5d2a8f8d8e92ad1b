//! Quantile threshold calibration and flagging.

use serde::{Deserialize, Serialize};

use super::{BaselineError, ScoreKind};
use crate::episodes::Classification;

/// A scalar detector whose threshold is an order statistic of nominal
/// calibration scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetector")]
pub struct CalibratedDetector {
    score_kind: ScoreKind,
    threshold: f64,
    quantile: f64,
    calibration_size: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    score_kind: ScoreKind,
    threshold: f64,
    quantile: f64,
    calibration_size: usize,
}

impl TryFrom<RawDetector> for CalibratedDetector {
    type Error = BaselineError;

    fn try_from(raw: RawDetector) -> Result<Self, Self::Error> {
        check_quantile(raw.quantile)?;
        if !raw.threshold.is_finite() {
            return Err(BaselineError::NonFinite);
        }
        if raw.calibration_size == 0 {
            return Err(BaselineError::EmptyScores);
        }
        Ok(Self { score_kind: raw.score_kind, threshold: raw.threshold, quantile: raw.quantile, calibration_size: raw.calibration_size })
    }
}

fn check_quantile(q: f64) -> Result<(), BaselineError> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(BaselineError::QuantileOutOfRange(q))
    }
}

/// 1-indexed rank ceil(q·n). Products within 1e-9 of an integer are taken
/// as that integer so that e.g. 0.07·100 ranks 7, not 8.
pub fn order_statistic_rank(quantile: f64, n: usize) -> usize {
    let product = quantile * n as f64;
    let nearest = product.round();
    let rank = if (product - nearest).abs() <= 1e-9 * product.abs().max(1.0) { nearest } else { product.ceil() };
    (rank as usize).clamp(1, n)
}

/// Threshold at the ascending order statistic of rank ceil(q·n).
pub fn calibrate(score_kind: ScoreKind, scores: &[f64], quantile: f64) -> Result<CalibratedDetector, BaselineError> {
    check_quantile(quantile)?;
    if scores.is_empty() {
        return Err(BaselineError::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(BaselineError::NonFinite);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[order_statistic_rank(quantile, sorted.len()) - 1];
    Ok(CalibratedDetector { score_kind, threshold, quantile, calibration_size: scores.len() })
}

impl CalibratedDetector {
    pub fn score_kind(&self) -> &ScoreKind {
        &self.score_kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    pub fn calibration_size(&self) -> usize {
        self.calibration_size
    }

    /// Anomaly iff the score is strictly above the threshold.
    pub fn flag(&self, score: f64) -> Classification {
        if score > self.threshold {
            Classification::Anomaly
        } else {
            Classification::Normal
        }
    }

    /// Fraction of `scores` flagged.
    pub fn flagged_fraction(&self, scores: &[f64]) -> f64 {
        if scores.is_empty() {
            return 0.0;
        }
        scores.iter().filter(|&&s| self.flag(s).is_anomaly()).count() as f64 / scores.len() as f64
    }
}
