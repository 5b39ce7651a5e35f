//! Synthetic stream generator for exercising the monitor end to end.
//!
//! Streams are built from segments. Each segment draws from one regime:
//!
//! * in-distribution: a sticky Markov chain over classes, accurate and
//!   confident predictions, features near a per-class anchor direction;
//! * corrupted (severity 1..=5): accuracy degrades with severity while
//!   softmax confidence is only mildly tempered, so the posterior stays
//!   deceptively confident; wrong predictions flicker between classes
//!   and feature noise grows;
//! * out-of-distribution: records carry the sentinel label, predictions
//!   churn with no ground-truth class, and features are pure noise.
//!
//! That combination is the regime where confidence alone fails: the
//! temporal signals (posterior divergence, feature instability, label
//! flicker) move long before mean confidence does.
//!
//! Generation is deterministic: each segment runs its own seeded
//! generator, so editing one segment's length or seed leaves other
//! segments' draws untouched. All emitted floats are pre-rounded with
//! [`crate::streamio::wire_round`], making the in-memory stream equal to
//! the stream read back from disk.

use crate::record::{GroundTruth, StreamRecord};
use crate::streamio::wire_round;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("need at least 2 classes, got {0}")]
    NumClasses(usize),
    #[error("feature_dim must be positive when features are emitted")]
    FeatureDim,
    #[error("{name} must lie in [0, 1], got {value}")]
    NotAProbability { name: &'static str, value: f64 },
    #[error("{name} must be positive and finite, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be nonnegative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("severity {0} outside 1..=5")]
    Severity(u8),
    #[error("accuracy drop for severity {severity} exceeds the base accuracy")]
    DropTooDeep { severity: u8 },
    #[error("stream has no segments")]
    NoSegments,
    #[error("segment {0} has zero length")]
    EmptySegment(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    InDistribution,
    Corrupted { severity: u8 },
    OutOfDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpec {
    pub kind: SegmentKind,
    pub length: usize,
    /// Overrides the derived per-segment seed when set.
    pub seed: Option<u64>,
}

impl SegmentSpec {
    pub fn new(kind: SegmentKind, length: usize) -> Self {
        Self { kind, length, seed: None }
    }
}

/// The synthetic classifier-and-world model shared by all segments.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub emit_features: bool,
    /// Probability that a prediction is correct on clean data.
    pub id_accuracy: f64,
    /// Probability the true class repeats from one step to the next.
    pub class_stickiness: f64,
    /// Mean logit margin of the predicted class over the runner-up.
    pub logit_margin: f64,
    pub id_temperature: f64,
    /// Total feature noise norm relative to the unit anchor, clean data.
    pub id_feature_noise: f64,
    /// Accuracy lost at each corruption severity.
    pub accuracy_drop: [f64; 5],
    /// Softmax temperature at each severity; kept mild on purpose.
    pub corrupt_temperature: [f64; 5],
    pub corrupt_feature_noise: [f64; 5],
    pub ood_temperature: f64,
    /// Per-step probability that the prediction jumps during an
    /// out-of-distribution segment.
    pub ood_churn: f64,
}

impl Default for GeneratorModel {
    fn default() -> Self {
        Self {
            num_classes: 10,
            feature_dim: 32,
            emit_features: true,
            id_accuracy: 0.9,
            class_stickiness: 0.95,
            logit_margin: 3.5,
            id_temperature: 1.0,
            id_feature_noise: 0.35,
            accuracy_drop: [0.1, 0.2, 0.3, 0.4, 0.5],
            corrupt_temperature: [1.08, 1.16, 1.25, 1.36, 1.5],
            corrupt_feature_noise: [0.6, 0.9, 1.3, 1.8, 2.4],
            ood_temperature: 1.9,
            ood_churn: 0.5,
        }
    }
}

impl GeneratorModel {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.num_classes < 2 {
            return Err(GenError::NumClasses(self.num_classes));
        }
        if self.emit_features && self.feature_dim == 0 {
            return Err(GenError::FeatureDim);
        }
        let probs = [
            ("id_accuracy", self.id_accuracy),
            ("class_stickiness", self.class_stickiness),
            ("ood_churn", self.ood_churn),
        ];
        for (name, value) in probs {
            if !(0.0..=1.0).contains(&value) {
                return Err(GenError::NotAProbability { name, value });
            }
        }
        let positives = [
            ("logit_margin", self.logit_margin),
            ("id_temperature", self.id_temperature),
            ("ood_temperature", self.ood_temperature),
            ("corrupt_temperature[0]", self.corrupt_temperature[0]),
            ("corrupt_temperature[1]", self.corrupt_temperature[1]),
            ("corrupt_temperature[2]", self.corrupt_temperature[2]),
            ("corrupt_temperature[3]", self.corrupt_temperature[3]),
            ("corrupt_temperature[4]", self.corrupt_temperature[4]),
        ];
        for (name, value) in positives {
            if !(value.is_finite() && value > 0.0) {
                return Err(GenError::NotPositive { name, value });
            }
        }
        let nonneg = [
            ("id_feature_noise", self.id_feature_noise),
            ("corrupt_feature_noise[0]", self.corrupt_feature_noise[0]),
            ("corrupt_feature_noise[1]", self.corrupt_feature_noise[1]),
            ("corrupt_feature_noise[2]", self.corrupt_feature_noise[2]),
            ("corrupt_feature_noise[3]", self.corrupt_feature_noise[3]),
            ("corrupt_feature_noise[4]", self.corrupt_feature_noise[4]),
        ];
        for (name, value) in nonneg {
            if !(value.is_finite() && value >= 0.0) {
                return Err(GenError::Negative { name, value });
            }
        }
        for (k, &drop) in self.accuracy_drop.iter().enumerate() {
            if !(drop.is_finite() && drop >= 0.0) {
                return Err(GenError::Negative { name: "accuracy_drop", value: drop });
            }
            if drop > self.id_accuracy {
                return Err(GenError::DropTooDeep { severity: k as u8 + 1 });
            }
        }
        Ok(())
    }

    fn segment_accuracy(&self, kind: SegmentKind) -> Result<f64, GenError> {
        match kind {
            SegmentKind::InDistribution => Ok(self.id_accuracy),
            SegmentKind::Corrupted { severity } => {
                if !(1..=5).contains(&severity) {
                    return Err(GenError::Severity(severity));
                }
                Ok(self.id_accuracy - self.accuracy_drop[severity as usize - 1])
            }
            SegmentKind::OutOfDistribution => Ok(0.0),
        }
    }

    fn segment_temperature(&self, kind: SegmentKind) -> f64 {
        match kind {
            SegmentKind::InDistribution => self.id_temperature,
            SegmentKind::Corrupted { severity } => {
                self.corrupt_temperature[severity as usize - 1]
            }
            SegmentKind::OutOfDistribution => self.ood_temperature,
        }
    }

    fn segment_noise(&self, kind: SegmentKind) -> f64 {
        match kind {
            SegmentKind::InDistribution => self.id_feature_noise,
            SegmentKind::Corrupted { severity } => {
                self.corrupt_feature_noise[severity as usize - 1]
            }
            SegmentKind::OutOfDistribution => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub model: GeneratorModel,
    pub base_seed: u64,
    pub segments: Vec<SegmentSpec>,
}

/// Fixed seed for the per-class anchor directions, independent of the
/// stream seed: every generated stream shares one synthetic classifier.
const ANCHOR_SEED: u64 = 0x616e_6368_6f72;

fn class_anchors(num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(ANCHOR_SEED);
    (0..num_classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            // A zero draw has probability zero; guard anyway.
            if norm > 0.0 {
                for x in &mut v {
                    *x /= norm;
                }
            } else {
                v[0] = 1.0;
            }
            v
        })
        .collect()
}

fn uniform_other(rng: &mut ChaCha8Rng, num_classes: usize, avoid: usize) -> usize {
    let pick = rng.gen_range(0..num_classes - 1);
    if pick >= avoid {
        pick + 1
    } else {
        pick
    }
}

/// Softmax of logits at temperature `tau`, max-shifted for stability.
fn softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct ChainState {
    class: usize,
    last_pred: usize,
}

/// Generates the full stream described by `spec`.
pub fn generate(spec: &StreamSpec) -> Result<Vec<StreamRecord>, GenError> {
    spec.model.validate()?;
    if spec.segments.is_empty() {
        return Err(GenError::NoSegments);
    }
    for (i, segment) in spec.segments.iter().enumerate() {
        if segment.length == 0 {
            return Err(GenError::EmptySegment(i));
        }
        // Surfaces severity errors before any work happens.
        spec.model.segment_accuracy(segment.kind)?;
    }

    let model = &spec.model;
    let anchors = class_anchors(model.num_classes, model.feature_dim.max(1));
    let margin_dist =
        Exp::new(1.0 / model.logit_margin).expect("validated margin is positive");
    let noise_scale = 1.0 / (model.feature_dim.max(1) as f64).sqrt();

    let total: usize = spec.segments.iter().map(|s| s.length).sum();
    let mut records = Vec::with_capacity(total);
    let mut state = ChainState { class: 0, last_pred: 0 };
    let mut t = 0u64;

    for (index, segment) in spec.segments.iter().enumerate() {
        let seed = segment.seed.unwrap_or(spec.base_seed.wrapping_add(index as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let accuracy = model.segment_accuracy(segment.kind)?;
        let tau = model.segment_temperature(segment.kind);
        let sigma = model.segment_noise(segment.kind);

        for _ in 0..segment.length {
            if rng.gen::<f64>() >= model.class_stickiness {
                state.class = uniform_other(&mut rng, model.num_classes, state.class);
            }

            let (pred, label) = match segment.kind {
                SegmentKind::OutOfDistribution => {
                    let pred = if rng.gen::<f64>() < model.ood_churn {
                        rng.gen_range(0..model.num_classes)
                    } else {
                        state.last_pred
                    };
                    (pred, Some(GroundTruth::OutOfDistribution))
                }
                _ => {
                    let correct = rng.gen::<f64>() < accuracy;
                    let pred = if correct {
                        state.class
                    } else {
                        uniform_other(&mut rng, model.num_classes, state.class)
                    };
                    (pred, Some(GroundTruth::Class(state.class)))
                }
            };
            state.last_pred = pred;

            // Runner-up logits are standard normal; the predicted class
            // sits an exponential margin above their maximum, so the
            // argmax is the prediction by construction.
            let mut logits: Vec<f64> =
                (0..model.num_classes).map(|_| rng.sample(StandardNormal)).collect();
            let runner_up = logits
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != pred)
                .fold(f64::NEG_INFINITY, |a, (_, &z)| a.max(z));
            logits[pred] = runner_up + rng.sample(margin_dist);

            let mut posterior = softmax(&logits, tau);
            for p in &mut posterior {
                *p = wire_round(*p);
            }

            let feature = model.emit_features.then(|| {
                let mut x: Vec<f64> = (0..model.feature_dim)
                    .map(|_| {
                        let g: f64 = rng.sample(StandardNormal);
                        sigma * noise_scale * g
                    })
                    .collect();
                if segment.kind != SegmentKind::OutOfDistribution {
                    for (xi, ai) in x.iter_mut().zip(&anchors[state.class]) {
                        *xi += ai;
                    }
                }
                for v in &mut x {
                    *v = wire_round(*v);
                }
                x
            });

            records.push(StreamRecord { t, posterior, feature, label });
            t += 1;
        }
    }
    Ok(records)
}
