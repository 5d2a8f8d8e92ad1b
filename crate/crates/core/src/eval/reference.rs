//! Published reference values for report comparison.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{Column, ConfusionMatrix2x2};
use super::EvalError;
use crate::episodes::ScenarioClass;

/// The reference set shipped with the crate.
pub const BUNDLED: &str = include_str!("../../../../fixtures/reference_tables.toml");

/// One driving cell group. `None` rates are N/A.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceCell {
    pub anomalies: Option<u64>,
    pub observations: Option<u64>,
    pub tpr: Option<f64>,
    pub fnr: Option<f64>,
    pub tnr: Option<f64>,
    pub fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DrivingReference {
    #[serde(default)]
    pub note: String,
    #[serde(flatten)]
    pub columns: BTreeMap<String, ReferenceCell>,
}

impl DrivingReference {
    pub fn cell(&self, column: Column) -> Option<&ReferenceCell> {
        self.columns.get(column.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatePair {
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulationReference {
    #[serde(default)]
    pub detection_rate: BTreeMap<String, BTreeMap<ScenarioClass, f64>>,
    #[serde(default)]
    pub confusion: BTreeMap<String, BTreeMap<ScenarioClass, ConfusionMatrix2x2>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTables {
    #[serde(default)]
    pub driving: BTreeMap<String, DrivingReference>,
    #[serde(default)]
    pub perception_errors: BTreeMap<String, RatePair>,
    #[serde(default)]
    pub manipulation: ManipulationReference,
}

impl ReferenceTables {
    pub fn bundled() -> Self {
        Self::from_toml(BUNDLED).expect("bundled reference tables parse")
    }

    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        let tables: Self = toml::from_str(text).map_err(|e| EvalError::Reference(e.to_string()))?;
        for (label, driving) in &tables.driving {
            for key in driving.columns.keys() {
                if !Column::DRIVING.iter().any(|c| c.key() == key) {
                    return Err(EvalError::Reference(format!("driving.{label}: unknown column `{key}`")));
                }
            }
        }
        Ok(tables)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }
}
