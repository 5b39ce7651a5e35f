//! Offline evaluation of monitor output against labeled streams.
//!
//! The central construction is a pair of trailing windows over the
//! stream: accuracy over the last `m` labeled steps (ASW) and mean
//! confidence over the last `m` steps (CSW). An accuracy-drop event at a
//! step is ASW falling to or below a band calibrated on clean
//! in-distribution data; an alarm is CSW falling strictly below a
//! threshold. Sweeping the threshold yields a precision/recall curve and
//! its area. The module also provides ranking metrics (AUROC by
//! midranks, so ties count half), proper-score calibration metrics
//! (Brier, log loss, expected calibration error), and adherence checks
//! for the conformal exceedance rate and the abstention budget.
//!
//! Scoring starts at 0-based step index `m`: earlier steps are window
//! warm-up and are never counted, even when a window happens to be full.

use crate::record::{GroundTruth, StreamRecord};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("stream of {len} steps is too short for window {window}")]
    StreamTooShort { len: usize, window: usize },
    #[error("window length must be at least 1")]
    BadWindow,
    #[error("no drop events in the stream; the sweep is undefined")]
    NoEvents,
    #[error("ranking needs both positive and negative instances")]
    SingleClassRanking,
    #[error("bin count must be at least 1")]
    BadBins,
    #[error("value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("label {label} at index {index} outside 0..{classes}")]
    BadLabel { index: usize, label: usize, classes: usize },
    #[error("record {0} is not labeled in-distribution")]
    NotInDistribution(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

/// Trailing accuracy and confidence windows, fed one step at a time.
///
/// The accuracy ring advances only on labeled steps; the confidence ring
/// advances on every step. Queries return `None` until the respective
/// ring is full, and sum in chronological order so results are
/// bit-identical to a direct mean over the trailing slice.
#[derive(Debug, Clone)]
pub struct SlidingStats {
    m: usize,
    hits: Box<[bool]>,
    hit_head: usize,
    hit_filled: usize,
    confs: Box<[f64]>,
    conf_head: usize,
    conf_filled: usize,
}

impl SlidingStats {
    pub fn new(m: usize) -> Result<Self, EvalError> {
        if m == 0 {
            return Err(EvalError::BadWindow);
        }
        Ok(Self {
            m,
            hits: vec![false; m].into_boxed_slice(),
            hit_head: 0,
            hit_filled: 0,
            confs: vec![0.0; m].into_boxed_slice(),
            conf_head: 0,
            conf_filled: 0,
        })
    }

    pub fn push(&mut self, correct: Option<bool>, confidence: f64) {
        if let Some(hit) = correct {
            self.hits[self.hit_head] = hit;
            self.hit_head = (self.hit_head + 1) % self.m;
            self.hit_filled = (self.hit_filled + 1).min(self.m);
        }
        self.confs[self.conf_head] = confidence;
        self.conf_head = (self.conf_head + 1) % self.m;
        self.conf_filled = (self.conf_filled + 1).min(self.m);
    }

    /// Accuracy over the last `m` labeled steps.
    pub fn asw(&self) -> Option<f64> {
        if self.hit_filled < self.m {
            return None;
        }
        let hits = self.hits.iter().filter(|&&h| h).count();
        Some(hits as f64 / self.m as f64)
    }

    /// Mean confidence over the last `m` steps, summed oldest first.
    pub fn csw(&self) -> Option<f64> {
        if self.conf_filled < self.m {
            return None;
        }
        let mut sum = 0.0;
        for k in 0..self.m {
            sum += self.confs[(self.conf_head + k) % self.m];
        }
        Some(sum / self.m as f64)
    }
}

/// Per-step trailing windows for a whole stream, aligned with the input.
pub fn sliding_series(
    records: &[StreamRecord],
    confidences: &[f64],
    m: usize,
) -> Result<Vec<(Option<f64>, Option<f64>)>, EvalError> {
    if records.len() != confidences.len() {
        return Err(EvalError::LengthMismatch { left: records.len(), right: confidences.len() });
    }
    let mut stats = SlidingStats::new(m)?;
    let mut series = Vec::with_capacity(records.len());
    for (record, &confidence) in records.iter().zip(confidences) {
        if !confidence.is_finite() {
            return Err(EvalError::NonFinite(series.len()));
        }
        stats.push(record.correct(), confidence);
        series.push((stats.asw(), stats.csw()));
    }
    Ok(series)
}

/// Clean-data accuracy band: a drop event is ASW at or below
/// `mean - 3 * std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdBand {
    pub mean: f64,
    pub std: f64,
}

impl IdBand {
    pub fn threshold(&self) -> f64 {
        self.mean - 3.0 * self.std
    }
}

/// Calibrates the accuracy band from a fully labeled in-distribution
/// stream. The standard deviation is the population form.
pub fn id_band(records: &[StreamRecord], m: usize) -> Result<IdBand, EvalError> {
    if m == 0 {
        return Err(EvalError::BadWindow);
    }
    if records.len() <= m {
        return Err(EvalError::StreamTooShort { len: records.len(), window: m });
    }
    for (i, record) in records.iter().enumerate() {
        if !matches!(record.label, Some(GroundTruth::Class(_))) {
            return Err(EvalError::NotInDistribution(i));
        }
    }
    let mut stats = SlidingStats::new(m)?;
    let mut values = Vec::with_capacity(records.len() - m);
    for (t, record) in records.iter().enumerate() {
        stats.push(record.correct(), 0.0);
        if t >= m {
            values.push(stats.asw().expect("fully labeled stream fills the window by step m"));
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(IdBand { mean, std: var.sqrt() })
}

/// Event/alarm confusion counts at one alarm threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl EventCounts {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn precision(&self) -> Option<f64> {
        let alarms = self.true_positives + self.false_positives;
        (alarms > 0).then(|| self.true_positives as f64 / alarms as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let events = self.true_positives + self.false_negatives;
        (events > 0).then(|| self.true_positives as f64 / events as f64)
    }
}

/// Scored (event, confidence) pairs for steps at or after index `m` where
/// both windows are defined.
fn scored_steps(
    records: &[StreamRecord],
    confidences: &[f64],
    band: &IdBand,
    m: usize,
) -> Result<Vec<(bool, f64)>, EvalError> {
    let series = sliding_series(records, confidences, m)?;
    let threshold = band.threshold();
    let mut out = Vec::new();
    for (t, (asw, csw)) in series.into_iter().enumerate() {
        if t < m {
            continue;
        }
        if let (Some(asw), Some(csw)) = (asw, csw) {
            out.push((asw <= threshold, csw));
        }
    }
    if out.is_empty() {
        return Err(EvalError::StreamTooShort { len: records.len(), window: m });
    }
    Ok(out)
}

/// Counts events against alarms at alarm threshold `rho`. An alarm fires
/// when CSW is strictly below `rho`, so a CSW exactly at the threshold is
/// not an alarm.
pub fn label_events(
    records: &[StreamRecord],
    confidences: &[f64],
    band: &IdBand,
    m: usize,
    rho: f64,
) -> Result<EventCounts, EvalError> {
    let mut counts = EventCounts::default();
    for (event, csw) in scored_steps(records, confidences, band, m)? {
        let alarm = csw < rho;
        match (event, alarm) {
            (true, true) => counts.true_positives += 1,
            (true, false) => counts.false_negatives += 1,
            (false, true) => counts.false_positives += 1,
            (false, false) => counts.true_negatives += 1,
        }
    }
    Ok(counts)
}

/// One precision/recall point for an alarm threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Sweeps the alarm threshold over every distinct CSW value plus the
/// endpoints 0 and 1, keeping thresholds that produce at least one alarm.
pub fn drop_pr_sweep(
    records: &[StreamRecord],
    confidences: &[f64],
    band: &IdBand,
    m: usize,
) -> Result<Vec<PrPoint>, EvalError> {
    let mut steps = scored_steps(records, confidences, band, m)?;
    let positives = steps.iter().filter(|(event, _)| *event).count();
    if positives == 0 {
        return Err(EvalError::NoEvents);
    }
    // Sort by CSW so alarm counts at a threshold come from a prefix.
    steps.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut event_prefix = Vec::with_capacity(steps.len() + 1);
    event_prefix.push(0usize);
    for (event, _) in &steps {
        event_prefix.push(event_prefix.last().unwrap() + usize::from(*event));
    }

    let mut thresholds: Vec<f64> = steps.iter().map(|(_, c)| *c).collect();
    thresholds.push(0.0);
    thresholds.push(1.0);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut points = Vec::new();
    for rho in thresholds {
        let alarms = steps.partition_point(|(_, c)| *c < rho);
        if alarms == 0 {
            continue;
        }
        let tp = event_prefix[alarms];
        points.push(PrPoint {
            threshold: rho,
            precision: tp as f64 / alarms as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Threshold sweep for score-based failure detection, where an alarm is
/// the score at or above the threshold. One point per distinct score.
pub fn score_pr_sweep(scores: &[f64], positive: &[bool]) -> Result<Vec<PrPoint>, EvalError> {
    if scores.len() != positive.len() {
        return Err(EvalError::LengthMismatch { left: scores.len(), right: positive.len() });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Err(EvalError::NoEvents);
    }
    let mut pairs: Vec<(f64, bool)> =
        scores.iter().copied().zip(positive.iter().copied()).collect();
    // Descending score, so alarms at a threshold come from a prefix.
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut i = 0usize;
    while i < pairs.len() {
        let threshold = pairs[i].0;
        // Consume the whole tie group before emitting its point.
        while i < pairs.len() && pairs[i].0 == threshold {
            tp += usize::from(pairs[i].1);
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / i as f64,
            recall: tp as f64 / total_pos as f64,
        });
    }
    Ok(points)
}

/// Area under a precision/recall sweep by the trapezoid rule.
///
/// Each distinct recall keeps its best precision; the curve is extended
/// flat from the lowest-recall point down to recall zero. A sweep that
/// keeps precision 1 all the way to recall 1 therefore scores exactly 1.
pub fn pr_area(points: &[PrPoint]) -> Result<f64, EvalError> {
    if points.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut best: Vec<(f64, f64)> = Vec::new();
    let mut sorted: Vec<&PrPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.recall.total_cmp(&b.recall).then(b.precision.total_cmp(&a.precision)));
    for p in sorted {
        match best.last() {
            Some(&(recall, _)) if recall == p.recall => {}
            _ => best.push((p.recall, p.precision)),
        }
    }
    let mut area = best[0].0 * best[0].1;
    for pair in best.windows(2) {
        let (r0, p0) = pair[0];
        let (r1, p1) = pair[1];
        area += (r1 - r0) * 0.5 * (p0 + p1);
    }
    Ok(area)
}

/// The sweep point with the best F1, ties resolved toward the lower
/// threshold.
pub fn best_f1(points: &[PrPoint]) -> Option<&PrPoint> {
    let f1 = |p: &PrPoint| {
        let denom = p.precision + p.recall;
        if denom > 0.0 {
            2.0 * p.precision * p.recall / denom
        } else {
            0.0
        }
    };
    let mut best: Option<&PrPoint> = None;
    for p in points {
        let better = match best {
            None => true,
            Some(b) => {
                f1(p) > f1(b) || (f1(p) == f1(b) && p.threshold.total_cmp(&b.threshold).is_lt())
            }
        };
        if better {
            best = Some(p);
        }
    }
    best
}

/// AUROC with midranks: tied score pairs count one half.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != positive.len() {
        return Err(EvalError::LengthMismatch { left: scores.len(), right: positive.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassRanking);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j).
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if positive[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One ROC sweep point; alarms fire at scores at or above the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    /// False-positive rate at this threshold.
    pub fpr: f64,
    /// True-positive rate at this threshold.
    pub tpr: f64,
}

/// ROC curve as a descending threshold sweep: the alarm-nothing origin,
/// then one point per distinct score. Tied scores collapse into a single
/// point, so trapezoids over the list reproduce the midrank [`auroc`].
pub fn roc_points(scores: &[f64], positive: &[bool]) -> Result<Vec<RocPoint>, EvalError> {
    if scores.len() != positive.len() {
        return Err(EvalError::LengthMismatch { left: scores.len(), right: positive.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassRanking);
    }
    let mut pairs: Vec<(f64, bool)> =
        scores.iter().copied().zip(positive.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < pairs.len() {
        let threshold = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == threshold {
            tp += usize::from(pairs[i].1);
            fp += usize::from(!pairs[i].1);
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Mean multiclass Brier score: squared distance between the posterior
/// and the one-hot label.
pub fn brier(posteriors: &[&[f64]], labels: &[usize]) -> Result<f64, EvalError> {
    if posteriors.len() != labels.len() {
        return Err(EvalError::LengthMismatch { left: posteriors.len(), right: labels.len() });
    }
    if posteriors.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for (i, (p, &label)) in posteriors.iter().zip(labels).enumerate() {
        if label >= p.len() {
            return Err(EvalError::BadLabel { index: i, label, classes: p.len() });
        }
        let mut sq = 0.0;
        for (k, &pk) in p.iter().enumerate() {
            let target = f64::from(k == label);
            sq += (pk - target) * (pk - target);
        }
        sum += sq;
    }
    Ok(sum / posteriors.len() as f64)
}

/// Probability floor inside the log loss, keeping it finite on zeros.
pub const NLL_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of the true class.
pub fn nll(posteriors: &[&[f64]], labels: &[usize]) -> Result<f64, EvalError> {
    if posteriors.len() != labels.len() {
        return Err(EvalError::LengthMismatch { left: posteriors.len(), right: labels.len() });
    }
    if posteriors.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for (i, (p, &label)) in posteriors.iter().zip(labels).enumerate() {
        if label >= p.len() {
            return Err(EvalError::BadLabel { index: i, label, classes: p.len() });
        }
        sum += -(p[label].max(NLL_FLOOR)).ln();
    }
    Ok(sum / posteriors.len() as f64)
}

/// Expected calibration error over equal-width confidence bins. A
/// confidence of exactly 1 lands in the top bin.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64, EvalError> {
    if bins == 0 {
        return Err(EvalError::BadBins);
    }
    if confidences.len() != correct.len() {
        return Err(EvalError::LengthMismatch { left: confidences.len(), right: correct.len() });
    }
    if confidences.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut bin_conf = vec![0.0f64; bins];
    let mut bin_hits = vec![0usize; bins];
    let mut bin_count = vec![0usize; bins];
    for (i, (&c, &hit)) in confidences.iter().zip(correct).enumerate() {
        if !(0.0..=1.0).contains(&c) {
            return Err(EvalError::OutOfRange { index: i, value: c });
        }
        let bin = ((c * bins as f64) as usize).min(bins - 1);
        bin_conf[bin] += c;
        bin_hits[bin] += usize::from(hit);
        bin_count[bin] += 1;
    }
    let n = confidences.len() as f64;
    let mut err = 0.0;
    for b in 0..bins {
        if bin_count[b] == 0 {
            continue;
        }
        let count = bin_count[b] as f64;
        let acc = bin_hits[b] as f64 / count;
        let conf = bin_conf[b] / count;
        err += count / n * (acc - conf).abs();
    }
    Ok(err)
}

/// Absolute gap between the observed exceedance rate of scores over their
/// pre-update thresholds and the target rate.
pub fn exceedance_deviation(
    scores: &[f64],
    thresholds: &[f64],
    alpha: f64,
) -> Result<f64, EvalError> {
    if scores.len() != thresholds.len() {
        return Err(EvalError::LengthMismatch { left: scores.len(), right: thresholds.len() });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let exceed = scores.iter().zip(thresholds).filter(|(r, q)| r >= q).count();
    Ok((exceed as f64 / scores.len() as f64 - alpha).abs())
}

/// Abstention budget adherence over a decision sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetAdherence {
    /// Long-run abstention fraction.
    pub abstain_rate: f64,
    /// Absolute gap between the long-run rate and the budget.
    pub longrun_gap: f64,
    /// Highest abstention fraction over any contiguous window.
    pub worst_window_rate: f64,
}

pub fn budget_adherence(
    abstained: &[bool],
    budget: f64,
    window: usize,
) -> Result<BudgetAdherence, EvalError> {
    if window == 0 {
        return Err(EvalError::BadWindow);
    }
    if abstained.is_empty() {
        return Err(EvalError::Empty);
    }
    let total = abstained.iter().filter(|&&a| a).count();
    let abstain_rate = total as f64 / abstained.len() as f64;
    let worst_window_rate = if abstained.len() <= window {
        abstain_rate
    } else {
        let mut prefix = vec![0usize; abstained.len() + 1];
        for (i, &a) in abstained.iter().enumerate() {
            prefix[i + 1] = prefix[i] + usize::from(a);
        }
        let mut worst = 0usize;
        for start in 0..=abstained.len() - window {
            worst = worst.max(prefix[start + window] - prefix[start]);
        }
        worst as f64 / window as f64
    };
    Ok(BudgetAdherence {
        abstain_rate,
        longrun_gap: (abstain_rate - budget).abs(),
        worst_window_rate,
    })
}

/// Median steps from event onset to the first alarm inside that event's
/// run. Events with no alarm before they end are misses and contribute no
/// delay; `None` when nothing was detected.
pub fn median_detection_delay(
    events: &[bool],
    alarms: &[bool],
) -> Result<Option<f64>, EvalError> {
    if events.len() != alarms.len() {
        return Err(EvalError::LengthMismatch { left: events.len(), right: alarms.len() });
    }
    let mut delays = Vec::new();
    let mut t = 0usize;
    while t < events.len() {
        if !events[t] {
            t += 1;
            continue;
        }
        let onset = t;
        while t < events.len() && events[t] {
            t += 1;
        }
        if let Some(hit) = (onset..t).find(|&k| alarms[k]) {
            delays.push((hit - onset) as f64);
        }
    }
    if delays.is_empty() {
        return Ok(None);
    }
    delays.sort_by(f64::total_cmp);
    let n = delays.len();
    let median =
        if n % 2 == 1 { delays[n / 2] } else { 0.5 * (delays[n / 2 - 1] + delays[n / 2]) };
    Ok(Some(median))
}
