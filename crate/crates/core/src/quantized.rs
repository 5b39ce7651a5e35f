//! Integer and table-lookup variants of the signal kernels.
//!
//! Microcontroller deployments buffer posteriors as 8-bit codes with one
//! per-tensor scale (the largest entry maps to code 255), replace `ln`
//! with a 256-entry interpolated lookup table, and compute feature cosines
//! from integer dot products, rescaling to floating point only for the
//! final aggregation. This module mirrors the float signal path on that
//! representation; the per-step arithmetic lives in a separate kernel file
//! that a structural test keeps free of transcendental calls.
//!
//! Parity targets, checked in the test suites: quantized divergence within
//! 0.01 absolute of the float path, integer cosine within 1e-3, end-to-end
//! decisions agreeing on at least 99% of steps.

mod kernels;

use crate::record::validate_posterior;
use crate::signals::{SignalConfig, SignalVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuantizedError {
    #[error("log lookup requires x > 0, got {0}")]
    NonPositiveInput(f64),
    #[error("lookup table needs at least 2 entries, got {0}")]
    TableTooSmall(usize),
    #[error("vectors differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid posterior: {0}")]
    BadPosterior(#[from] crate::record::RecordError),
    #[error("non-finite feature entry")]
    NonFiniteFeature,
    #[error("window error: {0}")]
    Window(#[from] crate::window::WindowError),
    #[error("feature presence mismatch: window feature_dim is {expected:?}")]
    FeaturePresence { expected: Option<usize> },
}

/// Number of code points of the 8-bit posterior representation.
pub const POSTERIOR_LEVELS: u16 = 256;
/// Default lookup-table resolution.
pub const DEFAULT_LUT_SIZE: usize = 256;

/// Posterior stored as `u8` codes with one scale: `entry = code * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPosterior {
    codes: Vec<u8>,
    scale: f64,
}

/// Rounds a valid posterior to 8-bit codes. The largest entry becomes
/// code 255, so dequantized values stay in `[0, 1]` and the dequantized
/// sum stays within 1/128 of 1 for realistic (non-adversarial) inputs.
pub fn quantize_posterior(posterior: &[f64]) -> Result<QuantizedPosterior, QuantizedError> {
    validate_posterior(posterior)?;
    let max = posterior.iter().fold(f64::MIN, |a, &b| a.max(b));
    let scale = max / 255.0;
    let codes = posterior
        .iter()
        .map(|&p| ((p / scale).round() as u16).min(255) as u8)
        .collect();
    Ok(QuantizedPosterior { codes, scale })
}

impl QuantizedPosterior {
    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn entry(&self, i: usize) -> f64 {
        f64::from(self.codes[i]) * self.scale
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|&c| f64::from(c) * self.scale).collect()
    }

    /// Dequantized top-1 and top-2 entries.
    pub fn top_two(&self) -> (f64, f64) {
        let mut top1 = 0u8;
        let mut top2 = 0u8;
        for &c in &self.codes {
            if c > top1 {
                top2 = top1;
                top1 = c;
            } else if c > top2 {
                top2 = c;
            }
        }
        (f64::from(top1) * self.scale, f64::from(top2) * self.scale)
    }

    /// Dequantized top posterior entry.
    pub fn confidence(&self) -> f64 {
        self.top_two().0
    }
}

/// Feature vector as `i8` codes with one scale: `entry = code * scale`.
/// The largest magnitude maps to code 127 (or -127).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedFeature {
    codes: Vec<i8>,
    scale: f64,
}

pub fn quantize_feature(feature: &[f64]) -> Result<QuantizedFeature, QuantizedError> {
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(QuantizedError::NonFiniteFeature);
    }
    let max_abs = feature.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    // All-zero features keep scale 1 so dequantization stays exact.
    let scale = if max_abs == 0.0 { 1.0 } else { max_abs / 127.0 };
    let codes = feature
        .iter()
        .map(|&f| (f / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    Ok(QuantizedFeature { codes, scale })
}

impl QuantizedFeature {
    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Interpolated natural-log table over `(0, 1]`: entry `i` holds
/// `ln((i + 1) / n)`. Immutable after construction.
#[derive(Debug, Clone)]
pub struct LogLut {
    entries: Box<[f64]>,
    error_bound: f64,
}

impl LogLut {
    pub fn new(n: usize) -> Result<Self, QuantizedError> {
        if n < 2 {
            return Err(QuantizedError::TableTooSmall(n));
        }
        let entries: Box<[f64]> =
            (0..n).map(|i| ((i + 1) as f64 / n as f64).ln()).collect();
        // Linear interpolation of a concave function errs where the curve
        // slope equals the chord slope: on segment [a, b] that is
        // x* = 1 / slope, and the worst segment bounds the whole table.
        let mut error_bound = 0.0f64;
        for i in 0..n - 1 {
            let a = (i + 1) as f64 / n as f64;
            let slope = (entries[i + 1] - entries[i]) * n as f64;
            let x_star = 1.0 / slope;
            let chord = entries[i] + slope * (x_star - a);
            error_bound = error_bound.max(x_star.ln() - chord);
        }
        Ok(Self { entries, error_bound })
    }

    /// Table with [`DEFAULT_LUT_SIZE`] entries.
    pub fn with_default_size() -> Self {
        Self::new(DEFAULT_LUT_SIZE).expect("default size is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest absolute interpolation error over inputs in `[1/n, 1]`,
    /// computed at build time. Inputs below `1/n` are clamped and carry
    /// no accuracy claim.
    pub fn error_bound(&self) -> f64 {
        self.error_bound
    }

    pub fn state_bytes(&self) -> usize {
        self.entries.len() * std::mem::size_of::<f64>()
    }
}

/// Table-based `ln x` for `x` in `(0, 1]`; inputs below the first grid
/// point are clamped to it.
pub fn lut_log(lut: &LogLut, x: f64) -> Result<f64, QuantizedError> {
    if !x.is_finite() || x <= 0.0 {
        return Err(QuantizedError::NonPositiveInput(x));
    }
    Ok(kernels::lut_log_clamped(lut, x))
}

/// Divergence between quantized posteriors on the table-lookup path.
/// Approximates the float-path value within the parity tolerance; exact
/// zero on identical codes.
pub fn jsd_quantized(
    p: &QuantizedPosterior,
    q: &QuantizedPosterior,
    lut: &LogLut,
    epsilon: f64,
) -> Result<f64, QuantizedError> {
    if p.codes.len() != q.codes.len() {
        return Err(QuantizedError::LengthMismatch { left: p.codes.len(), right: q.codes.len() });
    }
    Ok(kernels::jsd_codes(&p.codes, p.scale, &q.codes, q.scale, lut, epsilon))
}

fn gcd_u128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Cosine from exact integer moments. The squared ratio
/// `dot^2 / (na * nb)` is reduced by its gcd before any float conversion,
/// so scaling both inputs by a common integer changes nothing, bit for
/// bit. Zero norms map to cosine 0.
fn cosine_from_moments(dot: i64, na: i64, nb: i64) -> f64 {
    if na == 0 || nb == 0 {
        return 0.0;
    }
    let num = (dot as i128) * (dot as i128);
    let den = (na as i128) * (nb as i128);
    let g = gcd_u128(num as u128, den as u128);
    let num_r = ((num as u128) / g) as f64;
    let den_r = ((den as u128) / g) as f64;
    let magnitude = (num_r / den_r).sqrt();
    if dot < 0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Cosine similarity of integer feature codes. The scales are accepted
/// for interface symmetry with the float path; they cancel in the ratio
/// and do not affect the result.
pub fn cosine_int(
    a: &[i32],
    b: &[i32],
    _scale_a: f64,
    _scale_b: f64,
) -> Result<f64, QuantizedError> {
    if a.len() != b.len() {
        return Err(QuantizedError::LengthMismatch { left: a.len(), right: b.len() });
    }
    let (dot, na, nb) = kernels::moments_i32(a, b);
    Ok(cosine_from_moments(dot, na, nb))
}

/// View of one buffered quantized step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedEntry<'a> {
    pub posterior_codes: &'a [u8],
    pub posterior_scale: f64,
    pub feature_codes: Option<&'a [i8]>,
    pub feature_scale: f64,
    pub label: usize,
}

/// Ring buffer over quantized steps; the 8-bit counterpart of
/// [`crate::window::TemporalWindow`], with the same eviction and lag
/// semantics. The predicted label is stored from the float argmax before
/// quantization, so code rounding can never flip it.
#[derive(Debug, Clone)]
pub struct QuantizedWindow {
    capacity: usize,
    num_classes: usize,
    feature_dim: Option<usize>,
    pcodes: Box<[u8]>,
    pscales: Box<[f64]>,
    fcodes: Box<[i8]>,
    fscales: Box<[f64]>,
    labels: Box<[usize]>,
    head: usize,
    filled: usize,
}

impl QuantizedWindow {
    pub fn new(
        capacity: usize,
        num_classes: usize,
        feature_dim: Option<usize>,
    ) -> Result<Self, QuantizedError> {
        if capacity == 0 {
            return Err(QuantizedError::Window(crate::window::WindowError::ZeroCapacity));
        }
        let fd = feature_dim.unwrap_or(0);
        Ok(Self {
            capacity,
            num_classes,
            feature_dim,
            pcodes: vec![0; capacity * num_classes].into_boxed_slice(),
            pscales: vec![0.0; capacity].into_boxed_slice(),
            fcodes: vec![0; capacity * fd].into_boxed_slice(),
            fscales: vec![1.0; capacity].into_boxed_slice(),
            labels: vec![0; capacity].into_boxed_slice(),
            head: 0,
            filled: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    pub fn push(
        &mut self,
        posterior: &QuantizedPosterior,
        feature: Option<&QuantizedFeature>,
        label: usize,
    ) -> Result<(), QuantizedError> {
        if posterior.codes.len() != self.num_classes {
            return Err(QuantizedError::Window(
                crate::window::WindowError::PosteriorDimension {
                    expected: self.num_classes,
                    got: posterior.codes.len(),
                },
            ));
        }
        if label >= self.num_classes {
            return Err(QuantizedError::Window(crate::window::WindowError::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            }));
        }
        match (self.feature_dim, feature) {
            (None, None) => {}
            (Some(d), Some(f)) if f.codes.len() == d => {}
            (Some(d), Some(f)) => {
                return Err(QuantizedError::Window(
                    crate::window::WindowError::FeatureDimension {
                        expected: d,
                        got: f.codes.len(),
                    },
                ))
            }
            (expected, _) => return Err(QuantizedError::FeaturePresence { expected }),
        }
        let slot = self.head;
        self.pcodes[slot * self.num_classes..(slot + 1) * self.num_classes]
            .copy_from_slice(&posterior.codes);
        self.pscales[slot] = posterior.scale;
        if let (Some(d), Some(f)) = (self.feature_dim, feature) {
            self.fcodes[slot * d..(slot + 1) * d].copy_from_slice(&f.codes);
            self.fscales[slot] = f.scale;
        }
        self.labels[slot] = label;
        self.head = (self.head + 1) % self.capacity;
        self.filled = (self.filled + 1).min(self.capacity);
        Ok(())
    }

    pub fn lag(&self, lag: usize) -> Result<QuantizedEntry<'_>, QuantizedError> {
        if lag == 0 || lag > self.filled {
            return Err(QuantizedError::Window(
                crate::window::WindowError::InsufficientHistory {
                    requested: lag,
                    available: self.filled,
                },
            ));
        }
        let slot = (self.head + self.capacity - lag) % self.capacity;
        Ok(QuantizedEntry {
            posterior_codes: &self.pcodes[slot * self.num_classes..(slot + 1) * self.num_classes],
            posterior_scale: self.pscales[slot],
            feature_codes: self.feature_dim.map(|d| &self.fcodes[slot * d..(slot + 1) * d]),
            feature_scale: self.fscales[slot],
            label: self.labels[slot],
        })
    }

    pub fn state_bytes(&self) -> usize {
        self.pcodes.len() * std::mem::size_of::<u8>()
            + self.pscales.len() * std::mem::size_of::<f64>()
            + self.fcodes.len() * std::mem::size_of::<i8>()
            + self.fscales.len() * std::mem::size_of::<f64>()
            + self.labels.len() * std::mem::size_of::<usize>()
    }
}

/// Full signal vector on the quantized path, mirroring
/// [`crate::signals::compute_signals`]: same lag weighting, same cold-start
/// conventions, integer kernels underneath.
pub fn quantized_signals(
    window: &QuantizedWindow,
    posterior: &QuantizedPosterior,
    feature: Option<&QuantizedFeature>,
    predicted: usize,
    cfg: &SignalConfig,
    lut: &LogLut,
) -> Result<SignalVector, QuantizedError> {
    match (window.feature_dim, feature) {
        (None, None) | (Some(_), Some(_)) => {}
        (expected, _) => return Err(QuantizedError::FeaturePresence { expected }),
    }

    let mut divergence = 0.0;
    let mut cos_acc = 0.0;
    let mut persist_acc = 0.0;
    let mut count = 0usize;
    for (lag, weight) in cfg.available_lags(window.len()) {
        let entry = window.lag(lag).expect("lag filtered to available history");
        divergence += weight
            * kernels::jsd_codes(
                &posterior.codes,
                posterior.scale,
                entry.posterior_codes,
                entry.posterior_scale,
                lut,
                cfg.epsilon(),
            );
        if let (Some(f), Some(lagged)) = (feature, entry.feature_codes) {
            let (dot, na, nb) = kernels::moments_i8(&f.codes, lagged);
            cos_acc += cosine_from_moments(dot, na, nb);
        }
        persist_acc += f64::from(entry.label == predicted);
        count += 1;
    }

    let instability = if feature.is_none() || count == 0 {
        0.0
    } else {
        1.0 - cos_acc / count as f64
    };
    let inconsistency = if count == 0 { 0.0 } else { 1.0 - persist_acc / count as f64 };
    let (top1, top2) = posterior.top_two();
    let blend = cfg.proxy_blend();
    let proxy = blend * (1.0 - top1) + (1.0 - blend) * (1.0 - (top1 - top2));
    Ok(SignalVector { divergence, instability, inconsistency, proxy })
}
