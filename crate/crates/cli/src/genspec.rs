//! The stream-spec TOML read by `driftwatch gen`.
//!
//! A spec pins a seed, optional generator-model overrides, and the
//! segment schedule:
//!
//! ```toml
//! seed = 42
//!
//! [model]
//! num_classes = 10
//!
//! [[segments]]
//! kind = "id"
//! length = 500
//!
//! [[segments]]
//! kind = "corrupted"
//! length = 200
//! severity = 3
//! ```

use std::path::Path;

use driftwatch_core::streamgen::{GeneratorModel, SegmentKind, SegmentSpec, StreamSpec};
use serde::{Deserialize, Serialize};

use crate::error::{at_path, read_text, CliError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpecFile {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelOverrides,
    pub segments: Vec<SegmentEntry>,
}

impl GenSpecFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        toml::from_str(&read_text(path)?).map_err(|e| at_path(path, e))
    }

    /// Resolves overrides against the model defaults. Range checks live
    /// in the generator itself.
    pub fn to_stream_spec(&self, seed_override: Option<u64>) -> Result<StreamSpec, CliError> {
        let mut model = GeneratorModel::default();
        let o = &self.model;
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = o.$field { model.$field = v; })*
            };
        }
        apply!(
            num_classes,
            feature_dim,
            emit_features,
            id_accuracy,
            class_stickiness,
            logit_margin,
            id_temperature,
            id_feature_noise,
            accuracy_drop,
            corrupt_temperature,
            corrupt_feature_noise,
            ood_temperature,
            ood_churn
        );
        let segments = self
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| s.to_segment(i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StreamSpec { model, base_seed: seed_override.unwrap_or(self.seed), segments })
    }
}

/// Every generator-model knob, all optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub num_classes: Option<usize>,
    pub feature_dim: Option<usize>,
    pub emit_features: Option<bool>,
    pub id_accuracy: Option<f64>,
    pub class_stickiness: Option<f64>,
    pub logit_margin: Option<f64>,
    pub id_temperature: Option<f64>,
    pub id_feature_noise: Option<f64>,
    pub accuracy_drop: Option<[f64; 5]>,
    pub corrupt_temperature: Option<[f64; 5]>,
    pub corrupt_feature_noise: Option<[f64; 5]>,
    pub ood_temperature: Option<f64>,
    pub ood_churn: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEntry {
    /// One of `id`, `corrupted`, `ood`.
    pub kind: String,
    pub length: usize,
    /// Corruption severity 1..=5; only for `corrupted` segments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub severity: Option<u8>,
    /// Per-segment seed override; rarely needed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SegmentEntry {
    fn to_segment(&self, index: usize) -> Result<SegmentSpec, CliError> {
        let kind = match (self.kind.as_str(), self.severity) {
            ("id", None) => SegmentKind::InDistribution,
            ("ood", None) => SegmentKind::OutOfDistribution,
            ("corrupted", Some(severity)) => SegmentKind::Corrupted { severity },
            ("corrupted", None) => {
                return Err(CliError::Validation(format!(
                    "segment {index}: corrupted segments need a severity"
                )))
            }
            ("id" | "ood", Some(_)) => {
                return Err(CliError::Validation(format!(
                    "segment {index}: only corrupted segments take a severity"
                )))
            }
            (other, _) => {
                return Err(CliError::Validation(format!(
                    "segment {index}: unknown kind {other:?} (expected id, corrupted, or ood)"
                )))
            }
        };
        Ok(SegmentSpec { kind, length: self.length, seed: self.seed })
    }

    pub fn from_segment(spec: &SegmentSpec) -> Self {
        let (kind, severity) = match spec.kind {
            SegmentKind::InDistribution => ("id", None),
            SegmentKind::Corrupted { severity } => ("corrupted", Some(severity)),
            SegmentKind::OutOfDistribution => ("ood", None),
        };
        Self { kind: kind.to_string(), length: spec.length, severity, seed: spec.seed }
    }
}

/// Fully resolved generator-model values, for manifests.
#[derive(Debug, Serialize)]
pub struct ModelSnapshot {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub emit_features: bool,
    pub id_accuracy: f64,
    pub class_stickiness: f64,
    pub logit_margin: f64,
    pub id_temperature: f64,
    pub id_feature_noise: f64,
    pub accuracy_drop: [f64; 5],
    pub corrupt_temperature: [f64; 5],
    pub corrupt_feature_noise: [f64; 5],
    pub ood_temperature: f64,
    pub ood_churn: f64,
}

impl From<&GeneratorModel> for ModelSnapshot {
    fn from(m: &GeneratorModel) -> Self {
        Self {
            num_classes: m.num_classes,
            feature_dim: m.feature_dim,
            emit_features: m.emit_features,
            id_accuracy: m.id_accuracy,
            class_stickiness: m.class_stickiness,
            logit_margin: m.logit_margin,
            id_temperature: m.id_temperature,
            id_feature_noise: m.id_feature_noise,
            accuracy_drop: m.accuracy_drop,
            corrupt_temperature: m.corrupt_temperature,
            corrupt_feature_noise: m.corrupt_feature_noise,
            ood_temperature: m.ood_temperature,
            ood_churn: m.ood_churn,
        }
    }
}
