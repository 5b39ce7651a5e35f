//! On-disk TOML formats: the tool configuration and fitted parameters.
//!
//! The config file is a flat key set, every key optional: `lambda`,
//! `risk_level`, `budget`, `warmup_steps`, `quantile_step`,
//! `burst_window`, `W`, `lag_set`, `lag_weights`, `proxy_blend`,
//! `epsilon`, plus an optional `[fit]` table. Absent keys take the
//! library defaults, so an absent file means an all-default run.

use std::fs;
use std::path::Path;

use driftwatch_core::fitting::FitConfig;
use driftwatch_core::signals::{DEFAULT_EPSILON, DEFAULT_LAGS, DEFAULT_PROXY_BLEND};
use driftwatch_core::{CalibConfig, CombinerParams, MonitorConfig, SignalConfig};
use serde::{Deserialize, Serialize};

use crate::error::{at_path, read_text, write_error, CliError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolConfig {
    /// History window capacity.
    #[serde(rename = "W")]
    pub window: usize,
    pub lag_set: Vec<usize>,
    /// Normalized per-lag weights; omitted means proportional to the
    /// reciprocal lag.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lag_weights: Option<Vec<f64>>,
    pub proxy_blend: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub risk_level: f64,
    pub budget: f64,
    pub warmup_steps: usize,
    pub quantile_step: f64,
    pub burst_window: usize,
    pub fit: FitSection,
}

impl Default for ToolConfig {
    fn default() -> Self {
        let calib = CalibConfig::default();
        Self {
            window: 16,
            lag_set: DEFAULT_LAGS.to_vec(),
            lag_weights: None,
            proxy_blend: DEFAULT_PROXY_BLEND,
            epsilon: DEFAULT_EPSILON,
            lambda: calib.lambda,
            risk_level: calib.risk_level,
            budget: calib.budget,
            warmup_steps: calib.warmup_steps,
            quantile_step: calib.quantile_step,
            burst_window: calib.burst_window,
            fit: FitSection::default(),
        }
    }
}

impl ToolConfig {
    /// Loads the file, or the defaults when no path was given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => toml::from_str(&read_text(p)?).map_err(|e| at_path(p, e)),
        }
    }

    /// Weights as they will actually run, the reciprocal-lag fallback
    /// resolved. Matches the library default normalization exactly.
    pub fn resolved_lag_weights(&self) -> Vec<f64> {
        match &self.lag_weights {
            Some(w) => w.clone(),
            None => {
                let raw: Vec<f64> = self.lag_set.iter().map(|&l| 1.0 / l as f64).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            }
        }
    }

    /// The same config with every fallback made explicit, for manifests.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.lag_weights = Some(self.resolved_lag_weights());
        out
    }

    pub fn signal_config(&self) -> Result<SignalConfig, CliError> {
        SignalConfig::new(
            self.lag_set.clone(),
            self.resolved_lag_weights(),
            self.proxy_blend,
            self.epsilon,
            self.window,
        )
        .map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn calib_config(&self) -> CalibConfig {
        CalibConfig {
            lambda: self.lambda,
            risk_level: self.risk_level,
            budget: self.budget,
            warmup_steps: self.warmup_steps,
            quantile_step: self.quantile_step,
            burst_window: self.burst_window,
        }
    }

    pub fn monitor_config(&self, combiner: CombinerParams) -> Result<MonitorConfig, CliError> {
        Ok(MonitorConfig {
            window: self.window,
            signals: self.signal_config()?,
            calib: self.calib_config(),
            combiner,
        })
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            l2: self.fit.l2,
            max_iters: self.fit.max_iters,
            tolerance: self.fit.tolerance,
            class_balance: self.fit.class_balance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub l2: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub class_balance: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            l2: fit.l2,
            max_iters: fit.max_iters,
            tolerance: fit.tolerance,
            class_balance: fit.class_balance,
        }
    }
}

/// The fitted-combiner file: four weights and a bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub weights: [f64; 4],
    pub bias: f64,
}

impl ParamsFile {
    pub fn load(path: &Path) -> Result<CombinerParams, CliError> {
        let file: Self = toml::from_str(&read_text(path)?).map_err(|e| at_path(path, e))?;
        if file.weights.iter().chain([&file.bias]).any(|v| !v.is_finite()) {
            return Err(at_path(path, "weights and bias must be finite"));
        }
        Ok(CombinerParams { weights: file.weights, bias: file.bias })
    }

    pub fn save(path: &Path, params: &CombinerParams) -> Result<(), CliError> {
        let file = Self { weights: params.weights, bias: params.bias };
        let text = toml::to_string(&file).expect("params serialize infallibly");
        fs::write(path, text).map_err(|e| write_error(path, e))
    }
}
