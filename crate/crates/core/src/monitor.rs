//! The streaming monitor: one `observe` call per classifier step.
//!
//! Each step runs the same fixed pipeline. Temporal signals are computed
//! against the history window (which still ends at the previous step),
//! the combiner maps them to an uncertainty score, the score is blended
//! with instantaneous confidence into a nonconformity score, and the
//! conformal state decides accept or abstain against the threshold
//! calibrated on strictly earlier steps. Only then does the current step
//! enter the window. Memory never grows with stream length: it is a
//! fixed function of the window capacity, class count, and feature
//! dimension.
//!
//! Two interchangeable backends implement the signal computation: the
//! float path, and an integer-code path that stores 8-bit quantized
//! posteriors and features and evaluates divergence through a lookup
//! table, for hosts without fast transcendentals.

use crate::conformal::{CalibConfig, ConformalError, Decision, MonitorState};
use crate::quantized::{
    quantize_feature, quantize_posterior, quantized_signals, LogLut, QuantizedError,
    QuantizedWindow,
};
use crate::record::{argmax, validate_posterior, RecordError};
use crate::signals::{
    compute_signals, uncertainty_score, CombinerParams, SignalConfig, SignalError, SignalVector,
};
use crate::window::{TemporalWindow, WindowError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Quantized(#[from] QuantizedError),
    #[error("window capacity {window} cannot serve lag {lag}")]
    LagExceedsWindow { window: usize, lag: usize },
    #[error("window capacity must be at least 1")]
    EmptyWindow,
}

/// Everything fixed at deployment time.
#[derive(Debug, Clone)]
pub struct MonitorConfig {
    /// History window capacity.
    pub window: usize,
    pub signals: SignalConfig,
    pub calib: CalibConfig,
    pub combiner: CombinerParams,
}

impl MonitorConfig {
    /// Defaults with the given fitted combiner.
    pub fn with_combiner(combiner: CombinerParams) -> Self {
        let window = 16;
        Self {
            window,
            signals: SignalConfig::defaults_for(window)
                .expect("a 16-deep window serves the default lag set"),
            calib: CalibConfig::default(),
            combiner,
        }
    }

    fn validate(&self) -> Result<(), MonitorError> {
        if self.window == 0 {
            return Err(MonitorError::EmptyWindow);
        }
        if let Some(&lag) = self.signals.lag_set().iter().max() {
            if lag > self.window {
                return Err(MonitorError::LagExceedsWindow { window: self.window, lag });
            }
        }
        self.calib.validate()?;
        Ok(())
    }
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self::with_combiner(CombinerParams::zeros())
    }
}

enum Backend {
    Float(TemporalWindow),
    Quantized { window: QuantizedWindow, lut: LogLut },
}

/// Everything produced at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub decision: Decision,
    pub signals: SignalVector,
    /// Combined uncertainty score in [0, 1].
    pub uncertainty: f64,
    /// Argmax of the observed posterior.
    pub predicted: usize,
}

pub struct Monitor {
    config: MonitorConfig,
    backend: Backend,
    state: MonitorState,
    num_classes: usize,
    feature_dim: Option<usize>,
}

impl Monitor {
    pub fn new_float(
        config: MonitorConfig,
        num_classes: usize,
        feature_dim: Option<usize>,
    ) -> Result<Self, MonitorError> {
        config.validate()?;
        let window = TemporalWindow::new(config.window, num_classes, feature_dim)?;
        let state = MonitorState::new(&config.calib)?;
        Ok(Self { config, backend: Backend::Float(window), state, num_classes, feature_dim })
    }

    pub fn new_quantized(
        config: MonitorConfig,
        num_classes: usize,
        feature_dim: Option<usize>,
    ) -> Result<Self, MonitorError> {
        config.validate()?;
        let window = QuantizedWindow::new(config.window, num_classes, feature_dim)?;
        let lut = LogLut::with_default_size();
        let state = MonitorState::new(&config.calib)?;
        Ok(Self {
            config,
            backend: Backend::Quantized { window, lut },
            state,
            num_classes,
            feature_dim,
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn in_warmup(&self) -> bool {
        self.state.in_warmup()
    }

    pub fn steps_seen(&self) -> u64 {
        self.state.steps_seen()
    }

    /// Current threshold, before any update from a future step.
    pub fn quantile(&self) -> f64 {
        self.state.quantile()
    }

    /// Processes one step: signals, score, decision, then history push.
    pub fn observe(
        &mut self,
        posterior: &[f64],
        feature: Option<&[f64]>,
    ) -> Result<StepOutput, MonitorError> {
        validate_posterior(posterior)?;
        if posterior.len() != self.num_classes {
            return Err(MonitorError::Window(WindowError::PosteriorDimension {
                expected: self.num_classes,
                got: posterior.len(),
            }));
        }
        let predicted = argmax(posterior);

        let (signals, confidence) = match &mut self.backend {
            Backend::Float(window) => {
                let signals =
                    compute_signals(window, posterior, feature, predicted, &self.config.signals)?;
                let confidence = posterior[predicted];
                window.push(posterior, feature, predicted)?;
                (signals, confidence)
            }
            Backend::Quantized { window, lut } => {
                let qpost = quantize_posterior(posterior)?;
                let qfeat = feature.map(quantize_feature).transpose()?;
                let signals = quantized_signals(
                    window,
                    &qpost,
                    qfeat.as_ref(),
                    predicted,
                    &self.config.signals,
                    lut,
                )?;
                let confidence = qpost.confidence();
                window.push(&qpost, qfeat.as_ref(), predicted)?;
                (signals, confidence)
            }
        };

        let uncertainty = uncertainty_score(&signals, &self.config.combiner);
        let score =
            crate::conformal::nonconformity(uncertainty, confidence, self.config.calib.lambda)?;
        let decision = self.state.step(score, predicted, &self.config.calib);

        Ok(StepOutput { decision, signals, uncertainty, predicted })
    }

    /// Bytes of mutable monitor state: history window plus conformal
    /// state plus the divergence table. Constant over the stream.
    pub fn state_bytes(&self) -> usize {
        let backend = match &self.backend {
            Backend::Float(window) => window.state_bytes(),
            Backend::Quantized { window, lut } => window.state_bytes() + lut.state_bytes(),
        };
        backend + self.state.state_bytes()
    }
}

impl std::fmt::Debug for Monitor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let backend = match self.backend {
            Backend::Float(_) => "float",
            Backend::Quantized { .. } => "quantized",
        };
        f.debug_struct("Monitor")
            .field("backend", &backend)
            .field("num_classes", &self.num_classes)
            .field("feature_dim", &self.feature_dim)
            .field("steps_seen", &self.state.steps_seen())
            .finish()
    }
}
