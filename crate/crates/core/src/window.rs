//! Constant-memory ring buffer over the last `W` stream steps.
//!
//! The window owns flat, preallocated storage: pushing never allocates, and
//! the heap footprint is a fixed function of `(W, num_classes, feature_dim)`.
//! The predicted label is stored alongside each posterior rather than being
//! recomputed on read, so later storage transformations can never flip a
//! recorded argmax.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("posterior has {got} entries, window expects {expected}")]
    PosteriorDimension { expected: usize, got: usize },
    #[error("feature has {got} entries, window expects {expected}")]
    FeatureDimension { expected: usize, got: usize },
    #[error("feature presence mismatch: window feature_dim is {expected:?}")]
    FeaturePresence { expected: Option<usize> },
    #[error("lag {requested} exceeds available history {available}")]
    InsufficientHistory { requested: usize, available: usize },
    #[error("window capacity must be >= 1")]
    ZeroCapacity,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
}

/// View of one buffered step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry<'a> {
    pub posterior: &'a [f64],
    pub feature: Option<&'a [f64]>,
    pub label: usize,
}

/// Ring buffer of the `W` most recent (posterior, feature, label) triples.
#[derive(Debug, Clone)]
pub struct TemporalWindow {
    capacity: usize,
    num_classes: usize,
    feature_dim: Option<usize>,
    posteriors: Box<[f64]>,
    features: Box<[f64]>,
    labels: Box<[usize]>,
    /// Slot that the next push writes to.
    head: usize,
    /// Number of valid entries, at most `capacity`.
    filled: usize,
}

impl TemporalWindow {
    /// `feature_dim = None` disables feature buffering entirely.
    pub fn new(
        capacity: usize,
        num_classes: usize,
        feature_dim: Option<usize>,
    ) -> Result<Self, WindowError> {
        if capacity == 0 {
            return Err(WindowError::ZeroCapacity);
        }
        let fd = feature_dim.unwrap_or(0);
        Ok(Self {
            capacity,
            num_classes,
            feature_dim,
            posteriors: vec![0.0; capacity * num_classes].into_boxed_slice(),
            features: vec![0.0; capacity * fd].into_boxed_slice(),
            labels: vec![0; capacity].into_boxed_slice(),
            head: 0,
            filled: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    /// Number of buffered entries, `min(pushes, capacity)`.
    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    /// Appends one step, evicting the oldest once full. On any dimension
    /// error the window is left unchanged.
    pub fn push(
        &mut self,
        posterior: &[f64],
        feature: Option<&[f64]>,
        label: usize,
    ) -> Result<(), WindowError> {
        if posterior.len() != self.num_classes {
            return Err(WindowError::PosteriorDimension {
                expected: self.num_classes,
                got: posterior.len(),
            });
        }
        if label >= self.num_classes {
            return Err(WindowError::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        match (self.feature_dim, feature) {
            (None, None) => {}
            (Some(d), Some(f)) if f.len() == d => {}
            (Some(d), Some(f)) => {
                return Err(WindowError::FeatureDimension { expected: d, got: f.len() })
            }
            (expected, _) => return Err(WindowError::FeaturePresence { expected }),
        }

        let slot = self.head;
        self.posteriors[slot * self.num_classes..(slot + 1) * self.num_classes]
            .copy_from_slice(posterior);
        if let (Some(d), Some(f)) = (self.feature_dim, feature) {
            self.features[slot * d..(slot + 1) * d].copy_from_slice(f);
        }
        self.labels[slot] = label;
        self.head = (self.head + 1) % self.capacity;
        self.filled = (self.filled + 1).min(self.capacity);
        Ok(())
    }

    /// Entry pushed `lag` steps ago; `lag = 1` is the most recent.
    pub fn lag(&self, lag: usize) -> Result<Entry<'_>, WindowError> {
        if lag == 0 || lag > self.filled {
            return Err(WindowError::InsufficientHistory {
                requested: lag,
                available: self.filled,
            });
        }
        let slot = (self.head + self.capacity - lag) % self.capacity;
        let posterior = &self.posteriors[slot * self.num_classes..(slot + 1) * self.num_classes];
        let feature = self.feature_dim.map(|d| &self.features[slot * d..(slot + 1) * d]);
        Ok(Entry { posterior, feature, label: self.labels[slot] })
    }

    /// Heap bytes held by the buffers; constant for fixed
    /// `(capacity, num_classes, feature_dim)`.
    pub fn state_bytes(&self) -> usize {
        self.posteriors.len() * std::mem::size_of::<f64>()
            + self.features.len() * std::mem::size_of::<f64>()
            + self.labels.len() * std::mem::size_of::<usize>()
    }
}
