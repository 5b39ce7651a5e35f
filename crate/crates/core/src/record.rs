//! Stream records: one classifier emission per time step.

use thiserror::Error;

/// Tolerance for the posterior simplex check. Values are stored in text
/// form at nine significant digits, so the sum of a valid posterior can
/// drift from 1 by at most a few units in the ninth digit.
pub const SIMPLEX_TOLERANCE: f64 = 1e-5;

/// Ground truth attached to a record for offline evaluation.
///
/// Monitoring itself never reads this; it exists so that evaluation
/// streams can carry correctness and out-of-distribution flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruth {
    /// True class index in `[0, num_classes)`.
    Class(usize),
    /// The input comes from outside the label space; no class applies.
    OutOfDistribution,
}

/// One step of a classifier stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    /// Step index, strictly increasing along a stream.
    pub t: u64,
    /// Posterior over the class set; entries nonnegative, summing to 1
    /// within [`SIMPLEX_TOLERANCE`].
    pub posterior: Vec<f64>,
    /// Optional projected feature vector. Present on every record of a
    /// stream or on none.
    pub feature: Option<Vec<f64>>,
    /// Optional evaluation label.
    pub label: Option<GroundTruth>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("posterior must have at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("posterior entry {index} is {value}, outside [0, 1]")]
    EntryOutOfRange { index: usize, value: f64 },
    #[error("posterior sums to {sum}, not 1 within {SIMPLEX_TOLERANCE}")]
    NotASimplex { sum: f64 },
    #[error("non-finite value in {field}")]
    NonFinite { field: &'static str },
}

/// Checks that `posterior` is a valid distribution over >= 2 classes.
pub fn validate_posterior(posterior: &[f64]) -> Result<(), RecordError> {
    if posterior.len() < 2 {
        return Err(RecordError::TooFewClasses(posterior.len()));
    }
    let mut sum = 0.0;
    for (index, &value) in posterior.iter().enumerate() {
        if !value.is_finite() {
            return Err(RecordError::NonFinite { field: "posterior" });
        }
        if !(0.0..=1.0 + SIMPLEX_TOLERANCE).contains(&value) {
            return Err(RecordError::EntryOutOfRange { index, value });
        }
        sum += value;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(RecordError::NotASimplex { sum });
    }
    Ok(())
}

/// Index of the largest posterior entry; first index wins ties.
pub fn argmax(posterior: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..posterior.len() {
        if posterior[i] > posterior[best] {
            best = i;
        }
    }
    best
}

impl StreamRecord {
    /// Validates the posterior and any feature entries.
    pub fn validate(&self) -> Result<(), RecordError> {
        validate_posterior(&self.posterior)?;
        if let Some(feature) = &self.feature {
            if feature.iter().any(|v| !v.is_finite()) {
                return Err(RecordError::NonFinite { field: "feature" });
            }
        }
        Ok(())
    }

    /// Predicted class of this record.
    pub fn predicted(&self) -> usize {
        argmax(&self.posterior)
    }

    /// Whether the backbone prediction is correct. `None` when the record
    /// carries no label, and also for out-of-distribution inputs: they
    /// have no ground-truth class, so accuracy windows skip them.
    pub fn correct(&self) -> Option<bool> {
        match self.label {
            Some(GroundTruth::Class(c)) => Some(c == self.predicted()),
            Some(GroundTruth::OutOfDistribution) | None => None,
        }
    }

    /// Fitting target: whether the prediction endorses a wrong answer.
    /// Unlike [`StreamRecord::correct`], an out-of-distribution record is
    /// a definite positive, since no class it names can be right.
    pub fn misclassified(&self) -> Option<bool> {
        match self.label {
            Some(GroundTruth::Class(c)) => Some(c != self.predicted()),
            Some(GroundTruth::OutOfDistribution) => Some(true),
            None => None,
        }
    }
}
