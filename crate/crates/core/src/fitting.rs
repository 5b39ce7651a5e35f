//! Offline fitting of the signal combiner.
//!
//! The combiner weights and bias are the parameters of an l2-regularized
//! logistic regression predicting backbone misclassification from the
//! four-signal vector, trained on a labeled development stream. Training
//! is full-batch gradient descent with a backtracking (Armijo) line
//! search: deterministic, monotonically non-increasing objective, no
//! stochastic minibatching. Class weights are inversely proportional to
//! class frequency so the rarer outcome is not drowned out. The example
//! order is canonicalized internally, which makes the result bit-identical
//! under permutation of the development set.
//!
//! The bias is not regularized. Defaults: `l2 = 1e-4`, at most 2000
//! iterations, gradient tolerance 1e-9.

use crate::record::StreamRecord;
use crate::signals::{compute_signals, sigmoid, CombinerParams, SignalConfig, SignalVector};
use crate::window::TemporalWindow;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("development set is empty")]
    Empty,
    #[error("degenerate development set: all targets are {0}")]
    SingleClass(bool),
    #[error("non-finite signal vector at example {0}")]
    NonFiniteSignal(usize),
    #[error("record {0} carries no label; fitting needs a labeled stream")]
    Unlabeled(usize),
    #[error("l2 strength must be finite and nonnegative, got {0}")]
    BadRegularization(f64),
    #[error("record {index}: {source}")]
    BadRecord { index: usize, source: crate::record::RecordError },
    #[error("record {index}: {source}")]
    Window { index: usize, source: crate::window::WindowError },
    #[error("record {index}: {source}")]
    Signal { index: usize, source: crate::signals::SignalError },
}

/// One development example: the signal vector observed at a step and
/// whether the backbone misclassified that step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevExample {
    pub signals: SignalVector,
    pub misclassified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Ridge strength on the weights (bias excluded).
    pub l2: f64,
    pub max_iters: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub tolerance: f64,
    /// Weight classes inversely to their frequency.
    pub class_balance: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { l2: 1e-4, max_iters: 2000, tolerance: 1e-9, class_balance: true }
    }
}

/// Fit outcome: parameters plus the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: CombinerParams,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value before any step, then after each accepted step.
    pub objective_trace: Vec<f64>,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds at least the initial objective")
    }
}

/// Replays a labeled stream through the float signal path to produce
/// development examples. Out-of-distribution records count as
/// misclassified: no prediction on them can be right.
pub fn extract_dev_examples(
    records: &[StreamRecord],
    cfg: &SignalConfig,
    window_capacity: usize,
) -> Result<Vec<DevExample>, FitError> {
    let first = records.first().ok_or(FitError::Empty)?;
    let mut window = TemporalWindow::new(
        window_capacity,
        first.posterior.len(),
        first.feature.as_ref().map(Vec::len),
    )
    .map_err(|source| FitError::Window { index: 0, source })?;

    let mut examples = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        record.validate().map_err(|source| FitError::BadRecord { index, source })?;
        let misclassified = record.misclassified().ok_or(FitError::Unlabeled(index))?;
        let predicted = record.predicted();
        let signals =
            compute_signals(&window, &record.posterior, record.feature.as_deref(), predicted, cfg)
                .map_err(|source| FitError::Signal { index, source })?;
        window
            .push(&record.posterior, record.feature.as_deref(), predicted)
            .map_err(|source| FitError::Window { index, source })?;
        examples.push(DevExample { signals, misclassified });
    }
    Ok(examples)
}

/// Per-class weights: `n / (2 * n_class)` when balancing, 1 otherwise.
fn class_weights(examples: &[DevExample], balance: bool) -> Result<(f64, f64), FitError> {
    let n = examples.len();
    let n_pos = examples.iter().filter(|e| e.misclassified).count();
    if n_pos == 0 {
        return Err(FitError::SingleClass(false));
    }
    if n_pos == n {
        return Err(FitError::SingleClass(true));
    }
    if !balance {
        return Ok((1.0, 1.0));
    }
    let n = n as f64;
    Ok((n / (2.0 * n_pos as f64), n / (2.0 * (examples.len() - n_pos) as f64)))
}

/// Stable binary cross-entropy `-y ln p - (1 - y) ln(1 - p)` at logit `z`.
fn cross_entropy(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn logit(params: &CombinerParams, s: &[f64; 4]) -> f64 {
    params.weights.iter().zip(s).map(|(w, x)| w * x).sum::<f64>() + params.bias
}

fn objective(
    examples: &[DevExample],
    order: &[usize],
    params: &CombinerParams,
    weights: (f64, f64),
    l2: f64,
) -> f64 {
    let n = examples.len() as f64;
    let mut acc = 0.0;
    for &i in order {
        let e = &examples[i];
        let y = f64::from(e.misclassified);
        let w = if e.misclassified { weights.0 } else { weights.1 };
        acc += w * cross_entropy(logit(params, &e.signals.as_array()), y);
    }
    acc / n + 0.5 * l2 * params.weights.iter().map(|w| w * w).sum::<f64>()
}

fn gradient(
    examples: &[DevExample],
    order: &[usize],
    params: &CombinerParams,
    weights: (f64, f64),
    l2: f64,
) -> ([f64; 4], f64) {
    let n = examples.len() as f64;
    let mut gw = [0.0f64; 4];
    let mut gb = 0.0f64;
    for &i in order {
        let e = &examples[i];
        let s = e.signals.as_array();
        let y = f64::from(e.misclassified);
        let w = if e.misclassified { weights.0 } else { weights.1 };
        let residual = w * (sigmoid(logit(params, &s)) - y);
        for (g, x) in gw.iter_mut().zip(s) {
            *g += residual * x;
        }
        gb += residual;
    }
    for (g, w) in gw.iter_mut().zip(params.weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

/// Input-order-independent processing order: examples sorted by target,
/// then by signal bytes.
fn canonical_order(examples: &[DevExample]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let key = |e: &DevExample| {
        let s = e.signals.as_array();
        (e.misclassified, s.map(f64::to_bits))
    };
    order.sort_by_key(|&i| key(&examples[i]));
    order
}

/// Fits the combiner from a zero start. Deterministic: the same example
/// multiset yields bit-identical parameters regardless of input order.
pub fn fit_combiner(examples: &[DevExample], cfg: &FitConfig) -> Result<FitReport, FitError> {
    if examples.is_empty() {
        return Err(FitError::Empty);
    }
    if !cfg.l2.is_finite() || cfg.l2 < 0.0 {
        return Err(FitError::BadRegularization(cfg.l2));
    }
    for (i, e) in examples.iter().enumerate() {
        if !e.signals.is_finite() {
            return Err(FitError::NonFiniteSignal(i));
        }
    }
    let weights = class_weights(examples, cfg.class_balance)?;
    let order = canonical_order(examples);

    let mut params = CombinerParams::zeros();
    let mut obj = objective(examples, &order, &params, weights, cfg.l2);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        let (gw, gb) = gradient(examples, &order, &params, weights, cfg.l2);
        let ginf = gw.iter().chain(std::iter::once(&gb)).fold(0.0f64, |a, g| a.max(g.abs()));
        if ginf <= cfg.tolerance {
            converged = true;
            break;
        }
        let g2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        // Backtracking line search with the Armijo condition.
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-18 {
            let mut candidate = params;
            for (w, g) in candidate.weights.iter_mut().zip(gw) {
                *w -= step * g;
            }
            candidate.bias -= step * gb;
            let cobj = objective(examples, &order, &candidate, weights, cfg.l2);
            if cobj <= obj - 1e-4 * step * g2 {
                accepted = Some((candidate, cobj));
                break;
            }
            step *= 0.5;
        }
        let Some((next, nobj)) = accepted else {
            // No descent step representable: numerically stationary.
            converged = true;
            break;
        };
        params = next;
        obj = nobj;
        trace.push(obj);
        iterations += 1;
    }

    Ok(FitReport { params, iterations, converged, objective_trace: trace })
}

/// The quantity [`fit_combiner`] minimizes, evaluated at fixed
/// parameters: weighted mean cross-entropy plus the ridge term.
pub fn fit_objective(
    examples: &[DevExample],
    params: &CombinerParams,
    cfg: &FitConfig,
) -> Result<f64, FitError> {
    if examples.is_empty() {
        return Err(FitError::Empty);
    }
    if !cfg.l2.is_finite() || cfg.l2 < 0.0 {
        return Err(FitError::BadRegularization(cfg.l2));
    }
    let weights = class_weights(examples, cfg.class_balance)?;
    let order = canonical_order(examples);
    Ok(objective(examples, &order, params, weights, cfg.l2))
}

/// Analytic gradient of [`fit_objective`]: `(d/dweights, d/dbias)`.
pub fn fit_gradient(
    examples: &[DevExample],
    params: &CombinerParams,
    cfg: &FitConfig,
) -> Result<([f64; 4], f64), FitError> {
    if examples.is_empty() {
        return Err(FitError::Empty);
    }
    if !cfg.l2.is_finite() || cfg.l2 < 0.0 {
        return Err(FitError::BadRegularization(cfg.l2));
    }
    let weights = class_weights(examples, cfg.class_balance)?;
    let order = canonical_order(examples);
    Ok(gradient(examples, &order, params, weights, cfg.l2))
}

/// Class-weighted mean cross-entropy and 0.5-threshold accuracy of fixed
/// parameters on a labeled example set.
pub fn eval_combiner(
    examples: &[DevExample],
    params: &CombinerParams,
) -> Result<(f64, f64), FitError> {
    if examples.is_empty() {
        return Err(FitError::Empty);
    }
    let weights = class_weights(examples, true)?;
    let order = canonical_order(examples);
    let log_loss = objective(examples, &order, params, weights, 0.0);
    let hits = examples
        .iter()
        .filter(|e| (sigmoid(logit(params, &e.signals.as_array())) >= 0.5) == e.misclassified)
        .count();
    Ok((log_loss, hits as f64 / examples.len() as f64))
}
