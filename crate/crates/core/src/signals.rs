//! Temporal-consistency signals and their logistic aggregation.
//!
//! At step `t` the monitor summarizes short-horizon behavior with four
//! bounded signals computed against a lag set `L` (weights `w_l`
//! renormalized over the lags actually available in the window):
//!
//! * posterior divergence `D_t = sum_l w_l * JSD(p_t, p_{t-l})`, where JSD
//!   is the Jensen-Shannon divergence in nats over epsilon-smoothed
//!   posteriors, bounded by `ln 2`;
//! * feature instability `1 - S_t`, `S_t` the mean cosine similarity
//!   between the current and lagged feature projections;
//! * decision inconsistency `1 - c_t`, `c_t` the fraction of lagged
//!   predicted labels equal to the current one;
//! * confidence proxy `m_t = blend * (1 - max_k p_k)
//!   + (1 - blend) * (1 - margin)`, margin being top-1 minus top-2.
//!
//! A logistic combiner turns the signal vector into an uncertainty score
//! `U_t = sigmoid(w . s_t + b)`. With no history at all the vector is
//! `[0, 0, 0, m_0]`: a cold monitor reports no temporal evidence.

use crate::window::TemporalWindow;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("distributions differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite input to {what}")]
    NonFinite { what: &'static str },
    #[error("confidence proxy needs >= 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("stability signal requires a window with features enabled")]
    FeaturesDisabled,
    #[error("lag set must be nonempty, sorted, unique, with lags in [1, {max_lag}]")]
    BadLagSet { max_lag: usize },
    #[error("lag weights must be nonnegative, match the lag set, and sum to 1")]
    BadLagWeights,
    #[error("{what} must lie in [0, 1], got {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
}

/// Lag structure and smoothing constants for the signal kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalConfig {
    lag_set: Vec<usize>,
    lag_weights: Vec<f64>,
    proxy_blend: f64,
    epsilon: f64,
}

pub const DEFAULT_LAGS: [usize; 3] = [1, 2, 4];
pub const DEFAULT_PROXY_BLEND: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 1e-6;

impl SignalConfig {
    /// `max_lag` is the window capacity; every lag must fit inside it.
    pub fn new(
        lag_set: Vec<usize>,
        lag_weights: Vec<f64>,
        proxy_blend: f64,
        epsilon: f64,
        max_lag: usize,
    ) -> Result<Self, SignalError> {
        if lag_set.is_empty()
            || lag_set.windows(2).any(|w| w[0] >= w[1])
            || lag_set[0] == 0
            || *lag_set.last().unwrap() > max_lag
        {
            return Err(SignalError::BadLagSet { max_lag });
        }
        if lag_weights.len() != lag_set.len()
            || lag_weights.iter().any(|&w| !w.is_finite() || w < 0.0)
            || (lag_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(SignalError::BadLagWeights);
        }
        if !(0.0..=1.0).contains(&proxy_blend) {
            return Err(SignalError::OutOfRange { what: "proxy_blend", value: proxy_blend });
        }
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(SignalError::BadEpsilon(epsilon));
        }
        Ok(Self { lag_set, lag_weights, proxy_blend, epsilon })
    }

    /// Lags `{1, 2, 4}` weighted proportional to `1/l`, blend 0.5,
    /// epsilon 1e-6.
    pub fn defaults_for(max_lag: usize) -> Result<Self, SignalError> {
        let lags: Vec<usize> = DEFAULT_LAGS.into_iter().filter(|&l| l <= max_lag).collect();
        let raw: Vec<f64> = lags.iter().map(|&l| 1.0 / l as f64).collect();
        let total: f64 = raw.iter().sum();
        Self::new(
            lags,
            raw.into_iter().map(|w| w / total).collect(),
            DEFAULT_PROXY_BLEND,
            DEFAULT_EPSILON,
            max_lag,
        )
    }

    pub fn lag_set(&self) -> &[usize] {
        &self.lag_set
    }

    pub fn lag_weights(&self) -> &[f64] {
        &self.lag_weights
    }

    pub fn proxy_blend(&self) -> f64 {
        self.proxy_blend
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Lags at most `available`, paired with weights renormalized over
    /// that subset. Empty when no configured lag is served yet.
    pub fn available_lags(&self, available: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let total: f64 = self
            .lag_set
            .iter()
            .zip(&self.lag_weights)
            .filter(|(&l, _)| l <= available)
            .map(|(_, &w)| w)
            .sum();
        self.lag_set
            .iter()
            .zip(&self.lag_weights)
            .filter(move |(&l, _)| l <= available)
            .map(move |(&l, &w)| (l, if total > 0.0 { w / total } else { 0.0 }))
    }
}

/// The four per-step signals, each in `[0, 1]` (divergence in `[0, ln 2]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalVector {
    pub divergence: f64,
    pub instability: f64,
    pub inconsistency: f64,
    pub proxy: f64,
}

impl SignalVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.divergence, self.instability, self.inconsistency, self.proxy]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Weights and bias of the logistic signal combiner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinerParams {
    pub weights: [f64; 4],
    pub bias: f64,
}

impl CombinerParams {
    pub fn zeros() -> Self {
        Self { weights: [0.0; 4], bias: 0.0 }
    }
}

/// Jensen-Shannon divergence in nats between epsilon-smoothed
/// distributions: both inputs are mapped to `(p_i + eps) / (1 + K * eps)`
/// first, which keeps the value finite on sparse posteriors.
/// Symmetric, zero iff `p == q`, at most `ln 2`.
pub fn jsd(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64, SignalError> {
    if p.len() != q.len() {
        return Err(SignalError::LengthMismatch { left: p.len(), right: q.len() });
    }
    let k = p.len() as f64;
    let norm = 1.0 + k * epsilon;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if !pi.is_finite() || !qi.is_finite() {
            return Err(SignalError::NonFinite { what: "jsd input" });
        }
        let ps = (pi + epsilon) / norm;
        let qs = (qi + epsilon) / norm;
        let m = 0.5 * (ps + qs);
        acc += 0.5 * ps * (ps / m).ln() + 0.5 * qs * (qs / m).ln();
    }
    // Rounding can push an exact zero a few ulps negative.
    Ok(acc.max(0.0))
}

/// Cosine similarity with the zero-vector convention `cos(0, x) = 0`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SignalError> {
    if a.len() != b.len() {
        return Err(SignalError::LengthMismatch { left: a.len(), right: b.len() });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if !x.is_finite() || !y.is_finite() {
            return Err(SignalError::NonFinite { what: "cosine input" });
        }
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Weighted multi-lag posterior divergence `D_t`. Zero when the window has
/// no usable lag yet.
pub fn divergence_signal(
    window: &TemporalWindow,
    posterior: &[f64],
    cfg: &SignalConfig,
) -> Result<f64, SignalError> {
    let mut acc = 0.0;
    for (lag, weight) in cfg.available_lags(window.len()) {
        let entry = window.lag(lag).expect("lag filtered to available history");
        acc += weight * jsd(posterior, entry.posterior, cfg.epsilon)?;
    }
    Ok(acc)
}

/// Mean lagged feature cosine `S_t`, reported as-is (callers subtract from
/// one). Defaults to 1 when no lag is available: an empty history is not
/// evidence of instability.
pub fn stability_signal(
    window: &TemporalWindow,
    feature: &[f64],
    cfg: &SignalConfig,
) -> Result<f64, SignalError> {
    if window.feature_dim().is_none() {
        return Err(SignalError::FeaturesDisabled);
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (lag, _) in cfg.available_lags(window.len()) {
        let entry = window.lag(lag).expect("lag filtered to available history");
        acc += cosine(feature, entry.feature.expect("feature buffering enabled"))?;
        count += 1;
    }
    if count == 0 {
        return Ok(1.0);
    }
    Ok(acc / count as f64)
}

/// Fraction `c_t` of available lagged predictions equal to the current
/// one; 1 when no lag is available.
pub fn persistence_signal(window: &TemporalWindow, predicted: usize, cfg: &SignalConfig) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for (lag, _) in cfg.available_lags(window.len()) {
        let entry = window.lag(lag).expect("lag filtered to available history");
        acc += f64::from(entry.label == predicted);
        count += 1;
    }
    if count == 0 {
        return 1.0;
    }
    acc / count as f64
}

/// Label-free confidence proxy
/// `m = blend * (1 - top1) + (1 - blend) * (1 - (top1 - top2))`.
pub fn confidence_proxy(posterior: &[f64], blend: f64) -> Result<f64, SignalError> {
    if posterior.len() < 2 {
        return Err(SignalError::TooFewClasses(posterior.len()));
    }
    let mut top1 = f64::NEG_INFINITY;
    let mut top2 = f64::NEG_INFINITY;
    for &p in posterior {
        if !p.is_finite() {
            return Err(SignalError::NonFinite { what: "confidence proxy input" });
        }
        if p > top1 {
            top2 = top1;
            top1 = p;
        } else if p > top2 {
            top2 = p;
        }
    }
    Ok(blend * (1.0 - top1) + (1.0 - blend) * (1.0 - (top1 - top2)))
}

/// Full signal vector for the current step, computed against the window
/// contents (strictly past steps). `feature` must be present iff the
/// window buffers features.
pub fn compute_signals(
    window: &TemporalWindow,
    posterior: &[f64],
    feature: Option<&[f64]>,
    predicted: usize,
    cfg: &SignalConfig,
) -> Result<SignalVector, SignalError> {
    let divergence = divergence_signal(window, posterior, cfg)?;
    let instability = match (window.feature_dim(), feature) {
        (Some(_), Some(f)) => 1.0 - stability_signal(window, f, cfg)?,
        // Feature-free deployments hold this slot at zero.
        (None, None) => 0.0,
        _ => return Err(SignalError::FeaturesDisabled),
    };
    let inconsistency = 1.0 - persistence_signal(window, predicted, cfg);
    let proxy = confidence_proxy(posterior, cfg.proxy_blend)?;
    Ok(SignalVector { divergence, instability, inconsistency, proxy })
}

/// Logistic aggregation `U = sigmoid(w . s + b)`, in `(0, 1)`.
pub fn uncertainty_score(signals: &SignalVector, params: &CombinerParams) -> f64 {
    let s = signals.as_array();
    let z = params
        .weights
        .iter()
        .zip(s.iter())
        .map(|(w, x)| w * x)
        .sum::<f64>()
        + params.bias;
    sigmoid(z)
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
