//! Streaming conformal thresholding with a budgeted abstention policy.
//!
//! Each step produces a nonconformity score
//! `r_t = lambda * U_t + (1 - lambda) * (1 - C_t)`, where `U_t` is the
//! aggregated temporal uncertainty and `C_t` the top posterior entry. A
//! constant-memory tracker follows the `(1 - alpha)` quantile `q` of the
//! score stream with the stochastic update
//!
//! ```text
//! q <- clamp(q + eta * (indicator(r > q) - alpha), 0, 1)
//! ```
//!
//! whose fixed point puts mass `alpha` above `q`. During the first
//! `warmup_steps` steps the tracker instead buffers scores and reports
//! their empirical `(1 - alpha)` quantile (nearest-rank); the buffer seeds
//! `q` and is then discarded, so steady-state memory is a fixed-size
//! record.
//!
//! The policy abstains when `r_t >= q` and the abstention budget allows
//! it. The budget rule grants an abstention iff
//!
//! * `(abstain_count + 1) / (step_count + 1) <= budget`, or
//! * no abstention occurred in the last `burst_window` decisions,
//!
//! which pins the long-run abstention rate at the budget on saturated
//! streams while still reacting inside every burst. Decisions during
//! warm-up are always Accept. The ordering contract is update-then-decide:
//! the decision at step `t` uses the quantile fitted to scores up to
//! `t - 1`, and `r_t` is folded in afterwards.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConformalError {
    #[error("{what} must lie in (0, 1), got {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("{what} must be positive, got {value}")]
    NotPositive { what: &'static str, value: usize },
    #[error("nonconformity inputs must be finite and in [0, 1]: U={u}, confidence={confidence}")]
    BadScoreInputs { u: f64, confidence: f64 },
}

/// Calibration and policy constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibConfig {
    /// Blend between temporal uncertainty and raw confidence in `r_t`.
    pub lambda: f64,
    /// Target exceedance rate `alpha` of the tracked quantile.
    pub risk_level: f64,
    /// Long-run abstention budget `b`.
    pub budget: f64,
    /// Steps of empirical buffering before the stochastic tracker runs;
    /// the policy accepts everything during this period.
    pub warmup_steps: usize,
    /// Tracker step size `eta`.
    pub quantile_step: f64,
    /// Lookback length of the burst allowance.
    pub burst_window: usize,
}

impl Default for CalibConfig {
    /// `lambda = 0.7`, `alpha = 0.1`, `budget = 0.15`, warm-up of three
    /// 16-step windows, `eta = 0.01`, burst window 50.
    fn default() -> Self {
        Self {
            lambda: 0.7,
            risk_level: 0.1,
            budget: 0.15,
            warmup_steps: 48,
            quantile_step: 0.01,
            burst_window: 50,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<(), ConformalError> {
        for (what, value) in [
            ("risk_level", self.risk_level),
            ("budget", self.budget),
            ("quantile_step", self.quantile_step),
        ] {
            if !value.is_finite() || value <= 0.0 || value >= 1.0 {
                return Err(ConformalError::OutOfRange { what, value });
            }
        }
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConformalError::OutOfRange { what: "lambda", value: self.lambda });
        }
        if self.warmup_steps == 0 {
            return Err(ConformalError::NotPositive { what: "warmup_steps", value: 0 });
        }
        if self.burst_window == 0 {
            return Err(ConformalError::NotPositive { what: "burst_window", value: 0 });
        }
        Ok(())
    }
}

/// Blends temporal uncertainty with the confidence complement.
pub fn nonconformity(u: f64, confidence: f64, lambda: f64) -> Result<f64, ConformalError> {
    if !u.is_finite() || !confidence.is_finite() || !(0.0..=1.0).contains(&u)
        || !(0.0..=1.0).contains(&confidence)
    {
        return Err(ConformalError::BadScoreInputs { u, confidence });
    }
    Ok(lambda * u + (1.0 - lambda) * (1.0 - confidence))
}

/// Constant-memory `(1 - alpha)` quantile follower.
#[derive(Debug, Clone)]
pub struct QuantileTracker {
    q: f64,
    eta: f64,
    warmup_capacity: usize,
    warmup_buffer: Vec<f64>,
    warmed: bool,
}

impl QuantileTracker {
    pub fn new(eta: f64, warmup_steps: usize) -> Self {
        Self {
            // Maximally conservative before any score arrives: nothing
            // can clear an empty tracker.
            q: 1.0,
            eta,
            warmup_capacity: warmup_steps,
            warmup_buffer: Vec::with_capacity(warmup_steps),
            warmed: false,
        }
    }

    /// Current quantile estimate; finite and in `[0, 1]` at all times.
    pub fn quantile(&self) -> f64 {
        self.q
    }

    /// True once the warm-up buffer has been consumed.
    pub fn warmed(&self) -> bool {
        self.warmed
    }

    /// Folds in one score. Buffers during warm-up (reporting the running
    /// empirical quantile), then switches to the stochastic update.
    pub fn update(&mut self, r: f64, risk_level: f64) {
        let r = r.clamp(0.0, 1.0);
        if !self.warmed {
            self.warmup_buffer.push(r);
            self.q = empirical_quantile(&self.warmup_buffer, 1.0 - risk_level);
            if self.warmup_buffer.len() >= self.warmup_capacity {
                self.warmed = true;
                self.warmup_buffer = Vec::new();
            }
            return;
        }
        let indicator = f64::from(r > self.q);
        self.q = (self.q + self.eta * (indicator - risk_level)).clamp(0.0, 1.0);
    }

    /// Heap bytes held; zero after warm-up.
    pub fn state_bytes(&self) -> usize {
        self.warmup_buffer.capacity() * std::mem::size_of::<f64>()
    }
}

/// Nearest-rank empirical `level` quantile: the `ceil(level * n)`-th
/// smallest value (the smallest value for levels at or below `1/n`).
pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (level * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Long-run plus burst abstention budget.
#[derive(Debug, Clone)]
pub struct BudgetController {
    abstain_count: u64,
    step_count: u64,
    /// Last `burst_window` decisions, true = abstained.
    recent: Box<[bool]>,
    cursor: usize,
    recent_filled: usize,
    recent_abstain: usize,
}

impl BudgetController {
    pub fn new(burst_window: usize) -> Self {
        Self {
            abstain_count: 0,
            step_count: 0,
            recent: vec![false; burst_window.max(1)].into_boxed_slice(),
            cursor: 0,
            recent_filled: 0,
            recent_abstain: 0,
        }
    }

    pub fn abstain_count(&self) -> u64 {
        self.abstain_count
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Whether one more abstention would stay within policy: either the
    /// long-run rate `(abstains + 1) / (steps + 1)` stays at or below the
    /// budget, or the whole burst window is abstention-free.
    pub fn budget_allows(&self, budget: f64) -> bool {
        let longrun =
            (self.abstain_count + 1) as f64 / (self.step_count + 1) as f64 <= budget;
        let burst_free = self.recent_filled == self.recent.len() && self.recent_abstain == 0;
        longrun || burst_free
    }

    /// Records a decision outcome.
    pub fn record(&mut self, abstained: bool) {
        self.step_count += 1;
        if abstained {
            self.abstain_count += 1;
        }
        if self.recent_filled == self.recent.len() {
            self.recent_abstain -= usize::from(self.recent[self.cursor]);
        } else {
            self.recent_filled += 1;
        }
        self.recent[self.cursor] = abstained;
        self.recent_abstain += usize::from(abstained);
        self.cursor = (self.cursor + 1) % self.recent.len();
    }

    pub fn state_bytes(&self) -> usize {
        self.recent.len() * std::mem::size_of::<bool>()
    }
}

/// Outcome kind of one monitored step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Pass the prediction through.
    Accept { label: usize },
    /// Route the input to a fallback; no label is endorsed.
    Abstain,
}

/// One decision with its evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub verdict: Verdict,
    /// Nonconformity score `r_t` of this step.
    pub score: f64,
    /// Quantile estimate in force when the decision was taken.
    pub quantile: f64,
}

impl Decision {
    pub fn abstained(&self) -> bool {
        matches!(self.verdict, Verdict::Abstain)
    }
}

/// Tracker, budget and warm-up progress: everything the policy needs
/// beyond the per-step score.
#[derive(Debug, Clone)]
pub struct MonitorState {
    tracker: QuantileTracker,
    budget: BudgetController,
    steps_seen: u64,
    warmup_steps: usize,
}

impl MonitorState {
    pub fn new(cfg: &CalibConfig) -> Result<Self, ConformalError> {
        cfg.validate()?;
        Ok(Self {
            tracker: QuantileTracker::new(cfg.quantile_step, cfg.warmup_steps),
            budget: BudgetController::new(cfg.burst_window),
            steps_seen: 0,
            warmup_steps: cfg.warmup_steps,
        })
    }

    pub fn tracker(&self) -> &QuantileTracker {
        &self.tracker
    }

    pub fn budget(&self) -> &BudgetController {
        &self.budget
    }

    pub fn in_warmup(&self) -> bool {
        (self.steps_seen as usize) < self.warmup_steps
    }

    pub fn steps_seen(&self) -> u64 {
        self.steps_seen
    }

    /// Current threshold estimate, untouched by scores not yet absorbed.
    pub fn quantile(&self) -> f64 {
        self.tracker.quantile()
    }

    /// Decides on a score using the quantile fitted to all previous
    /// scores, then records the outcome. Does not absorb `r` into the
    /// tracker; callers do that via [`MonitorState::absorb`] after
    /// deciding.
    pub fn decide(&mut self, r: f64, predicted: usize, cfg: &CalibConfig) -> Decision {
        let quantile = self.tracker.quantile();
        let abstain = !self.in_warmup() && r >= quantile && self.budget.budget_allows(cfg.budget);
        self.steps_seen += 1;
        self.budget.record(abstain);
        let verdict = if abstain { Verdict::Abstain } else { Verdict::Accept { label: predicted } };
        Decision { verdict, score: r, quantile }
    }

    /// Folds the score of the step just decided into the tracker.
    pub fn absorb(&mut self, r: f64, cfg: &CalibConfig) {
        self.tracker.update(r, cfg.risk_level);
    }

    /// Decide-then-absorb convenience preserving the ordering contract.
    pub fn step(&mut self, r: f64, predicted: usize, cfg: &CalibConfig) -> Decision {
        let decision = self.decide(r, predicted, cfg);
        self.absorb(r, cfg);
        decision
    }

    pub fn state_bytes(&self) -> usize {
        self.tracker.state_bytes() + self.budget.state_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nonconformity_blend() {
        let r = nonconformity(0.5, 0.9, 0.7).unwrap();
        assert_abs_diff_eq!(r, 0.7 * 0.5 + 0.3 * 0.1, epsilon = 1e-15);
        // Ablated blend reduces to the confidence complement.
        assert_abs_diff_eq!(nonconformity(0.5, 0.9, 0.0).unwrap(), 0.1, epsilon = 1e-15);
        assert!(nonconformity(f64::NAN, 0.5, 0.7).is_err());
        assert!(nonconformity(1.5, 0.5, 0.7).is_err());
    }

    #[test]
    fn empirical_quantile_nearest_rank() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(empirical_quantile(&v, 0.9), 0.9);
        assert_eq!(empirical_quantile(&v, 1.0), 1.0);
        assert_eq!(empirical_quantile(&v, 0.05), 0.1);
    }

    #[test]
    fn warmup_seeds_empirical_quantile() {
        let mut t = QuantileTracker::new(0.01, 10);
        for i in 1..=10 {
            t.update(i as f64 / 10.0, 0.1);
        }
        assert!(t.warmed());
        assert_eq!(t.quantile(), 0.9);
        // Buffer is discarded once warmed.
        assert_eq!(t.state_bytes(), 0);
    }

    #[test]
    fn stochastic_update_direction_and_magnitude() {
        let mut t = QuantileTracker::new(0.01, 1);
        t.update(0.5, 0.1);
        assert!(t.warmed());
        let q0 = t.quantile();
        t.update(q0 + 0.1, 0.1);
        assert_abs_diff_eq!(t.quantile(), q0 + 0.01 * 0.9, epsilon = 1e-12);
        let q1 = t.quantile();
        t.update(q1 - 0.1, 0.1);
        assert_abs_diff_eq!(t.quantile(), q1 - 0.01 * 0.1, epsilon = 1e-12);
    }

    #[test]
    fn quantile_stays_clamped() {
        let mut t = QuantileTracker::new(0.5, 1);
        t.update(1.0, 0.1);
        for _ in 0..100 {
            t.update(1.0, 0.1);
        }
        assert!(t.quantile() <= 1.0);
        for _ in 0..100 {
            t.update(0.0, 0.1);
        }
        assert!(t.quantile() >= 0.0);
    }

    /// Stochastic-approximation fixed point: on iid uniform scores the
    /// tracker settles near the true 0.9 quantile.
    #[test]
    fn tracker_converges_on_uniform_scores() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut t = QuantileTracker::new(0.01, 48);
        let mut tail = Vec::new();
        for i in 0..20_000 {
            t.update(rng.gen::<f64>(), 0.1);
            if i >= 10_000 {
                tail.push(t.quantile());
            }
        }
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((0.88..=0.92).contains(&mean), "tail mean {mean}");
    }

    #[test]
    fn budget_longrun_rule() {
        let mut b = BudgetController::new(50);
        // First step: (0 + 1) / (0 + 1) = 1 > 0.15.
        assert!(!b.budget_allows(0.15));
        for _ in 0..9 {
            b.record(false);
        }
        // (0 + 1) / (9 + 1) = 0.1 <= 0.15.
        assert!(b.budget_allows(0.15));
        b.record(true);
        // (1 + 1) / (10 + 1) = 0.18 > 0.15, burst window not yet full.
        assert!(!b.budget_allows(0.15));
    }

    #[test]
    fn burst_allowance_fires_on_quiet_window() {
        let mut b = BudgetController::new(5);
        b.record(true);
        for _ in 0..4 {
            b.record(false);
        }
        // Budget path: (1 + 1) / (5 + 1) = 0.33 > 0.15; the abstention is
        // still inside the 5-step lookback.
        assert!(!b.budget_allows(0.15));
        b.record(false);
        // The abstention has now left the lookback: burst allowance fires.
        assert!(b.budget_allows(0.15));
    }

    #[test]
    fn warmup_accepts_everything() {
        let cfg = CalibConfig { warmup_steps: 5, ..CalibConfig::default() };
        let mut state = MonitorState::new(&cfg).unwrap();
        for _ in 0..5 {
            let d = state.step(0.99, 3, &cfg);
            assert_eq!(d.verdict, Verdict::Accept { label: 3 });
        }
        assert!(!state.in_warmup());
    }

    #[test]
    fn decision_uses_pre_update_quantile() {
        let cfg = CalibConfig { warmup_steps: 2, ..CalibConfig::default() };
        let mut state = MonitorState::new(&cfg).unwrap();
        state.step(0.2, 0, &cfg);
        state.step(0.4, 0, &cfg);
        let q_before = state.tracker().quantile();
        let d = state.step(0.9, 0, &cfg);
        assert_eq!(d.quantile, q_before);
        assert_ne!(state.tracker().quantile(), q_before);
    }

    #[test]
    fn abstains_above_quantile_after_warmup() {
        let cfg = CalibConfig { warmup_steps: 10, ..CalibConfig::default() };
        let mut state = MonitorState::new(&cfg).unwrap();
        for i in 1..=10 {
            state.step(i as f64 / 20.0, 0, &cfg);
        }
        // q = 0.9-quantile of 0.05..0.50 = 0.45; plenty of accepts have
        // accrued, so the budget path allows one abstention.
        let d = state.step(0.99, 0, &cfg);
        assert!(d.abstained());
        let d = state.step(0.01, 0, &cfg);
        assert!(!d.abstained());
    }

    #[test]
    fn config_validation_rejects_out_of_range() {
        for bad in [
            CalibConfig { lambda: 1.5, ..CalibConfig::default() },
            CalibConfig { risk_level: 0.0, ..CalibConfig::default() },
            CalibConfig { budget: 1.0, ..CalibConfig::default() },
            CalibConfig { warmup_steps: 0, ..CalibConfig::default() },
            CalibConfig { quantile_step: -0.01, ..CalibConfig::default() },
            CalibConfig { burst_window: 0, ..CalibConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(CalibConfig::default().validate().is_ok());
    }
}
