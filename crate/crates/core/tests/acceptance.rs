//! Acceptance gate. One test per criterion; each prints a single
//! `acceptance c<k> <name>: PASS|FAIL (<measurements>)` line, so running
//! `cargo test --test acceptance -- --nocapture` reads as a checklist.
//! Tests share a lock because four criteria assert wall-clock bounds and
//! must not time each other's CPU contention.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use driftwatch_core::conformal::{CalibConfig, MonitorState};
use driftwatch_core::evaluation::{
    auroc, brier, drop_pr_sweep, ece, exceedance_deviation, id_band, label_events, nll, pr_area,
    score_pr_sweep, EventCounts, IdBand, PrPoint, NLL_FLOOR,
};
use driftwatch_core::fitting::{
    extract_dev_examples, fit_combiner, fit_gradient, fit_objective, DevExample, FitConfig,
};
use driftwatch_core::monitor::{Monitor, MonitorConfig, StepOutput};
use driftwatch_core::quantized::{jsd_quantized, quantize_posterior, LogLut};
use driftwatch_core::record::{argmax, GroundTruth, StreamRecord};
use driftwatch_core::signals::{
    confidence_proxy, jsd, sigmoid, CombinerParams, SignalVector, DEFAULT_PROXY_BLEND,
};
use driftwatch_core::streamgen::{generate, GeneratorModel, SegmentKind, SegmentSpec, StreamSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static GATE: OnceLock<Mutex<()>> = OnceLock::new();

/// Serializes the criteria; a poisoned lock only means an earlier
/// criterion failed, which must not mask this one.
fn serial() -> MutexGuard<'static, ()> {
    GATE.get_or_init(Mutex::default).lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: &str, ok: bool, detail: &str) {
    println!("acceptance {criterion}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "acceptance {criterion} failed: {detail}");
}

/// Hand-set combiner for criteria that do not involve fitting: positive
/// weight on every signal, bias placing a quiet stream on the low side.
fn bench_combiner() -> CombinerParams {
    CombinerParams { weights: [2.0, 1.0, 1.5, 1.0], bias: -1.5 }
}

fn stream(base_seed: u64, segments: Vec<SegmentSpec>) -> Vec<StreamRecord> {
    let spec = StreamSpec { model: GeneratorModel::default(), base_seed, segments };
    generate(&spec).expect("generator spec is valid")
}

fn id_stream(len: usize, base_seed: u64) -> Vec<StreamRecord> {
    stream(base_seed, vec![SegmentSpec::new(SegmentKind::InDistribution, len)])
}

fn run_monitor(monitor: &mut Monitor, records: &[StreamRecord]) -> Vec<StepOutput> {
    records
        .iter()
        .map(|r| monitor.observe(&r.posterior, r.feature.as_deref()).expect("valid record"))
        .collect()
}

#[test]
fn c1_streaming_calibration() {
    let _serial = serial();
    let records = id_stream(10_000, 4101);
    let start = Instant::now();
    let mut details = Vec::new();
    let mut worst = 0.0f64;
    for alpha in [0.05, 0.10, 0.20] {
        let mut config = MonitorConfig::with_combiner(bench_combiner());
        config.calib.risk_level = alpha;
        let warmup = config.calib.warmup_steps;
        let mut monitor = Monitor::new_float(config, 10, Some(32)).unwrap();
        let outputs = run_monitor(&mut monitor, &records);
        let scores: Vec<f64> = outputs.iter().map(|o| o.decision.score).collect();
        let thresholds: Vec<f64> = outputs.iter().map(|o| o.decision.quantile).collect();
        let dev = exceedance_deviation(&scores[warmup..], &thresholds[warmup..], alpha).unwrap();
        details.push(format!("alpha {alpha:.2} deviation {dev:.4}"));
        worst = worst.max(dev);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst <= 0.02 && elapsed < 5.0;
    report("c1 streaming calibration", ok, &format!("{}, {elapsed:.2}s", details.join(", ")));
}

#[test]
fn c2_budget_adherence() {
    let _serial = serial();
    let start = Instant::now();

    // Adversarial stream at the policy layer: every step carries the
    // maximal nonconformity 1.0, which ties or exceeds the tracked
    // quantile at every single step (the tracker never leaves [0, 1]),
    // so the budget is the only brake on abstention.
    let cfg = CalibConfig::default();
    let mut state = MonitorState::new(&cfg).unwrap();
    let n = 10_000;
    let mut abstained = Vec::with_capacity(n);
    let mut all_exceed = true;
    for _ in 0..n {
        let d = state.step(1.0, 0, &cfg);
        all_exceed &= d.score >= d.quantile;
        abstained.push(d.abstained());
    }
    let rate = abstained.iter().filter(|&&a| a).count() as f64 / n as f64;
    let gap = (rate - cfg.budget).abs();

    // Burst responsiveness: every post-warm-up 50-step window is
    // all-exceeding here, and each must contain an abstention. Warm-up
    // windows are excluded because the cold-start contract forbids any
    // abstention there.
    let burst_ok = abstained[cfg.warmup_steps..]
        .windows(cfg.burst_window)
        .all(|w| w.iter().any(|&a| a));

    // The same contract exercised through the full pipeline: a churning
    // out-of-distribution stream with the risk level above the budget,
    // so abstention demand outstrips supply and the cap binds.
    let records = stream(4202, vec![SegmentSpec::new(SegmentKind::OutOfDistribution, n)]);
    let mut config = MonitorConfig::with_combiner(bench_combiner());
    config.calib.risk_level = 0.2;
    let budget = config.calib.budget;
    let mut monitor = Monitor::new_float(config, 10, Some(32)).unwrap();
    let outputs = run_monitor(&mut monitor, &records);
    let pipeline_rate =
        outputs.iter().filter(|o| o.decision.abstained()).count() as f64 / n as f64;
    let pipeline_gap = (pipeline_rate - budget).abs();

    let elapsed = start.elapsed().as_secs_f64();
    let ok = all_exceed && gap <= 0.02 && burst_ok && pipeline_gap <= 0.02 && elapsed < 5.0;
    report(
        "c2 budget adherence",
        ok,
        &format!(
            "saturated-score rate {rate:.4} gap {gap:.4}, burst windows covered {burst_ok}, \
             pipeline rate {pipeline_rate:.4} gap {pipeline_gap:.4}, {elapsed:.2}s"
        ),
    );
}

#[test]
fn c3_detection_superiority() {
    let _serial = serial();
    let start = Instant::now();
    let m = 100;

    // Fit the combiner on a labeled development stream that mixes clean,
    // corrupted, and foreign segments.
    let mut dev_segments = vec![SegmentSpec::new(SegmentKind::InDistribution, 600)];
    for severity in 1..=5 {
        dev_segments.push(SegmentSpec::new(SegmentKind::Corrupted { severity }, 150));
    }
    dev_segments.push(SegmentSpec::new(SegmentKind::OutOfDistribution, 300));
    let dev_records = stream(7001, dev_segments);
    let config = MonitorConfig::with_combiner(CombinerParams::zeros());
    let examples = extract_dev_examples(&dev_records, &config.signals, config.window).unwrap();
    let fitted = fit_combiner(&examples, &FitConfig::default()).unwrap().params;

    // Accuracy band from a clean stream: an event is a sliding-window
    // accuracy at or below mean - 3 sigma.
    let band = id_band(&id_stream(1200, 7002), m).unwrap();

    // 20 streams: 4 replicas x 5 severities. Corruption arrives in
    // episodic bursts so that many evaluation windows straddle an onset
    // or a recovery; those mixed windows keep the ranking task from
    // saturating and make the severity sweep informative. The monitor's
    // score drives one sweep, the max-probability baseline drives the
    // other, over identical event labels.
    let mut gaps = Vec::new();
    let mut by_severity = [[0.0f64; 4]; 5];
    for replica in 0..4u64 {
        for severity in 1..=5u8 {
            let records = stream(
                9000 + replica * 100 + u64::from(severity),
                vec![
                    SegmentSpec::new(SegmentKind::InDistribution, 300),
                    SegmentSpec::new(SegmentKind::Corrupted { severity }, 150),
                    SegmentSpec::new(SegmentKind::InDistribution, 200),
                    SegmentSpec::new(SegmentKind::Corrupted { severity }, 150),
                    SegmentSpec::new(SegmentKind::InDistribution, 150),
                    SegmentSpec::new(SegmentKind::Corrupted { severity }, 150),
                    SegmentSpec::new(SegmentKind::InDistribution, 100),
                ],
            );
            let mut monitor =
                Monitor::new_float(MonitorConfig::with_combiner(fitted), 10, Some(32)).unwrap();
            let outputs = run_monitor(&mut monitor, &records);
            let monitored: Vec<f64> = outputs.iter().map(|o| 1.0 - o.decision.score).collect();
            let baseline: Vec<f64> =
                records.iter().map(|r| r.posterior[argmax(&r.posterior)]).collect();
            let area_m =
                pr_area(&drop_pr_sweep(&records, &monitored, &band, m).unwrap()).unwrap();
            let area_b = pr_area(&drop_pr_sweep(&records, &baseline, &band, m).unwrap()).unwrap();
            gaps.push(area_m - area_b);
            by_severity[usize::from(severity) - 1][replica as usize] = area_m;
        }
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let severity_means: Vec<f64> =
        by_severity.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let monotone = severity_means.windows(2).all(|w| w[1] >= w[0]);

    let elapsed = start.elapsed().as_secs_f64();
    let ok = mean_gap >= 0.03 && monotone && elapsed < 60.0;
    let means = severity_means.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ");
    report(
        "c3 detection superiority",
        ok,
        &format!("mean gap {mean_gap:.4}, severity means [{means}], {elapsed:.2}s"),
    );
}

#[test]
fn c4_quantized_parity() {
    let _serial = serial();
    let records = stream(
        4400,
        vec![
            SegmentSpec::new(SegmentKind::InDistribution, 2001),
            SegmentSpec::new(SegmentKind::Corrupted { severity: 3 }, 1000),
            SegmentSpec::new(SegmentKind::InDistribution, 1000),
            SegmentSpec::new(SegmentKind::OutOfDistribution, 1000),
        ],
    );

    // Kernel parity over 5,000 consecutive posterior pairs. The float
    // reference runs on the dequantized codes: the kernel's contract is
    // to match the float path on the values the codes represent, while
    // code rounding itself is bounded by the quantizer's own guarantee
    // (tracked here as the raw-input gap).
    let lut = LogLut::with_default_size();
    let mut worst = 0.0f64;
    let mut worst_raw = 0.0f64;
    for pair in records.windows(2) {
        let qa = quantize_posterior(&pair[1].posterior).unwrap();
        let qb = quantize_posterior(&pair[0].posterior).unwrap();
        let float = jsd(&qa.dequantize(), &qb.dequantize(), 1e-6).unwrap();
        let raw = jsd(&pair[1].posterior, &pair[0].posterior, 1e-6).unwrap();
        let quant = jsd_quantized(&qa, &qb, &lut, 1e-6).unwrap();
        worst = worst.max((float - quant).abs());
        worst_raw = worst_raw.max((raw - quant).abs());
    }

    // Full-pipeline agreement between independent float and quantized
    // monitors over the same stream.
    let config = MonitorConfig::with_combiner(bench_combiner());
    let mut float_monitor = Monitor::new_float(config.clone(), 10, Some(32)).unwrap();
    let mut quant_monitor = Monitor::new_quantized(config, 10, Some(32)).unwrap();
    let float_outputs = run_monitor(&mut float_monitor, &records);
    let quant_outputs = run_monitor(&mut quant_monitor, &records);
    let agreements = float_outputs
        .iter()
        .zip(&quant_outputs)
        .filter(|(f, q)| f.decision.verdict == q.decision.verdict)
        .count();
    let agreement = agreements as f64 / records.len() as f64;

    // Structural check: the integer kernels never call a transcendental.
    let src = include_str!("../src/quantized/kernels.rs");
    let forbidden = [
        ".ln(", ".log(", ".log2(", ".log10(", ".ln_1p(", ".exp(", ".exp2(", ".exp_m1(",
        ".powf(", ".powi(", ".sqrt(", ".cbrt(", ".sin(", ".cos(", ".tan(", ".sinh(", ".cosh(",
        ".tanh(", ".atan2(", "f64::ln", "f64::exp", "f64::powf",
    ];
    let clean = forbidden.iter().all(|needle| !src.contains(needle));

    let ok = worst <= 0.01 && agreement >= 0.99 && clean;
    report(
        "c4 quantized parity",
        ok,
        &format!(
            "worst jsd gap {worst:.2e} (vs raw floats {worst_raw:.2e}), \
             decision agreement {agreement:.4}, kernel free of transcendentals {clean}"
        ),
    );
}

#[test]
fn c5_constant_resources() {
    let _serial = serial();
    let records = stream(
        4500,
        vec![
            SegmentSpec::new(SegmentKind::InDistribution, 40_000),
            SegmentSpec::new(SegmentKind::Corrupted { severity: 3 }, 20_000),
            SegmentSpec::new(SegmentKind::InDistribution, 20_000),
            SegmentSpec::new(SegmentKind::OutOfDistribution, 20_000),
        ],
    );
    let config = MonitorConfig::with_combiner(bench_combiner());

    // Untimed pass over a prefix so allocator and cache warm-up are not
    // billed to the first timed block.
    let mut scratch = Monitor::new_float(config.clone(), 10, Some(32)).unwrap();
    run_monitor(&mut scratch, &records[..2000]);

    let mut monitor = Monitor::new_float(config.clone(), 10, Some(32)).unwrap();
    let mut block_times = Vec::new();
    let mut sizes = Vec::new();
    for chunk in records.chunks(10_000) {
        let block_start = Instant::now();
        for r in chunk {
            monitor.observe(&r.posterior, r.feature.as_deref()).unwrap();
        }
        block_times.push(block_start.elapsed().as_secs_f64());
        sizes.push(monitor.state_bytes());
    }
    let first = block_times[0];
    let last = *block_times.last().unwrap();
    let drift = (last - first).abs() / first;
    let sizes_constant = sizes.windows(2).all(|w| w[0] == w[1]);

    // The quantized backend holds its size too, and a wider window must
    // actually cost more state, or the accounting measures nothing.
    let mut quant = Monitor::new_quantized(config.clone(), 10, Some(32)).unwrap();
    let mut quant_sizes = Vec::new();
    for chunk in records[..20_000].chunks(10_000) {
        for r in chunk {
            quant.observe(&r.posterior, r.feature.as_deref()).unwrap();
        }
        quant_sizes.push(quant.state_bytes());
    }
    let quant_constant = quant_sizes.windows(2).all(|w| w[0] == w[1]);
    let mut wide_config = MonitorConfig::with_combiner(bench_combiner());
    wide_config.window = 32;
    let wide = Monitor::new_float(wide_config, 10, Some(32)).unwrap();
    let scales_with_window = wide.state_bytes() > Monitor::new_float(config, 10, Some(32))
        .unwrap()
        .state_bytes();

    let ok = sizes_constant && quant_constant && scales_with_window && drift <= 0.20;
    report(
        "c5 constant resources",
        ok,
        &format!(
            "state bytes constant float {sizes_constant} quantized {quant_constant}, \
             window widening grows state {scales_with_window}, \
             per-step drift {drift:.3} (first block {first:.3}s, last {last:.3}s)"
        ),
    );
}

/// O(n^2) rank comparison: wins plus half-ties over all pairs.
fn auroc_oracle(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0u64;
    let mut ties = 0u64;
    let mut pairs = 0u64;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1;
            } else if scores[i] == scores[j] {
                ties += 1;
            }
        }
    }
    (wins as f64 + 0.5 * ties as f64) / pairs as f64
}

/// Naive sweep: recount alarms and hits from scratch at every distinct
/// score, then apply the best-precision-per-recall trapezoid convention.
fn auprc_oracle(scores: &[f64], positive: &[bool]) -> (Vec<PrPoint>, f64) {
    let total_pos = positive.iter().filter(|&&p| p).count();
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = Vec::new();
    for &tau in &thresholds {
        let mut alarms = 0usize;
        let mut tp = 0usize;
        for (&s, &pos) in scores.iter().zip(positive) {
            if s >= tau {
                alarms += 1;
                tp += usize::from(pos);
            }
        }
        points.push(PrPoint {
            threshold: tau,
            precision: tp as f64 / alarms as f64,
            recall: tp as f64 / total_pos as f64,
        });
    }
    let mut by_recall: Vec<(f64, f64)> = Vec::new();
    let mut sorted: Vec<&PrPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.recall.total_cmp(&b.recall).then(b.precision.total_cmp(&a.precision)));
    for p in sorted {
        if by_recall.last().map_or(true, |&(r, _)| r != p.recall) {
            by_recall.push((p.recall, p.precision));
        }
    }
    let mut area = by_recall[0].0 * by_recall[0].1;
    for w in by_recall.windows(2) {
        area += (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1);
    }
    (points, area)
}

#[test]
fn c6_metric_oracles() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6600);
    let cases = 100;
    for _ in 0..cases {
        let n = rng.gen_range(5..=200usize);

        // Ranking instance with deliberate score ties and both classes.
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    f64::from(rng.gen_range(0..=20u32)) / 20.0
                } else {
                    rng.gen()
                }
            })
            .collect();
        let mut positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        positive[0] = true;
        positive[1] = false;

        let lib = auroc(&scores, &positive).unwrap();
        let oracle = auroc_oracle(&scores, &positive);
        assert_eq!(lib, oracle, "auroc mismatch");

        let points = score_pr_sweep(&scores, &positive).unwrap();
        let area = pr_area(&points).unwrap();
        let (oracle_points, oracle_area) = auprc_oracle(&scores, &positive);
        assert_eq!(points, oracle_points, "pr sweep mismatch");
        assert_eq!(area, oracle_area, "auprc mismatch");

        // Probabilistic instance.
        let k = rng.gen_range(2..=8usize);
        let posteriors: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let views: Vec<&[f64]> = posteriors.iter().map(Vec::as_slice).collect();

        let mut brier_sum = 0.0;
        for (p, &label) in views.iter().zip(&labels) {
            let mut sq = 0.0;
            for (idx, &pk) in p.iter().enumerate() {
                let target = f64::from(idx == label);
                sq += (pk - target) * (pk - target);
            }
            brier_sum += sq;
        }
        assert_eq!(brier(&views, &labels).unwrap(), brier_sum / n as f64, "brier mismatch");

        let mut nll_sum = 0.0;
        for (p, &label) in views.iter().zip(&labels) {
            nll_sum += -(p[label].max(NLL_FLOOR)).ln();
        }
        assert_eq!(nll(&views, &labels).unwrap(), nll_sum / n as f64, "nll mismatch");

        // Calibration instance: naive binning, one scan per bin.
        let confidences: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let correct: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let bins = 10;
        let mut expected = 0.0;
        for b in 0..bins {
            let mut count = 0usize;
            let mut hits = 0usize;
            let mut conf_sum = 0.0;
            for (&c, &hit) in confidences.iter().zip(&correct) {
                if ((c * bins as f64) as usize).min(bins - 1) == b {
                    count += 1;
                    hits += usize::from(hit);
                    conf_sum += c;
                }
            }
            if count > 0 {
                let acc = hits as f64 / count as f64;
                let conf = conf_sum / count as f64;
                expected += count as f64 / n as f64 * (acc - conf).abs();
            }
        }
        assert_eq!(ece(&confidences, &correct, bins).unwrap(), expected, "ece mismatch");
    }
    report(
        "c6 metric oracles",
        true,
        &format!("{cases} randomized instances, all five metrics bit-exact"),
    );
}

#[test]
fn c7_combiner_fitting() {
    let _serial = serial();

    // Recovery on an exact-frequency design: five signal points, each
    // replicated 40 times with positives rounded from the generating
    // probability, so the maximum-likelihood optimum sits next to the
    // truth instead of drifting with sampling noise.
    let truth = CombinerParams { weights: [2.0, -1.5, 1.0, 2.5], bias: -1.0 };
    let points = [
        [0.9, 0.1, 0.1, 0.2],
        [0.1, 0.9, 0.2, 0.1],
        [0.2, 0.1, 0.9, 0.1],
        [0.1, 0.3, 0.1, 0.9],
        [0.5, 0.5, 0.5, 0.5],
    ];
    let mut examples = Vec::with_capacity(200);
    for s in points {
        let z = truth.weights.iter().zip(&s).map(|(w, x)| w * x).sum::<f64>() + truth.bias;
        let positives = (40.0 * sigmoid(z)).round() as usize;
        let signals = SignalVector {
            divergence: s[0],
            instability: s[1],
            inconsistency: s[2],
            proxy: s[3],
        };
        for i in 0..40 {
            examples.push(DevExample { signals, misclassified: i < positives });
        }
    }
    let cfg = FitConfig { class_balance: false, ..FitConfig::default() };
    let report_fit = fit_combiner(&examples, &cfg).unwrap();
    let fitted = report_fit.params;
    let mut err2 = (fitted.bias - truth.bias).powi(2);
    let mut norm2 = truth.bias.powi(2);
    for k in 0..4 {
        err2 += (fitted.weights[k] - truth.weights[k]).powi(2);
        norm2 += truth.weights[k].powi(2);
    }
    let recovery = (err2 / norm2).sqrt();

    // Analytic gradient against central differences at random points.
    let mut rng = ChaCha8Rng::seed_from_u64(7700);
    let mut grad_examples: Vec<DevExample> = (0..120)
        .map(|_| DevExample {
            signals: SignalVector {
                divergence: rng.gen::<f64>() * std::f64::consts::LN_2,
                instability: rng.gen::<f64>() * 2.0,
                inconsistency: rng.gen(),
                proxy: rng.gen(),
            },
            misclassified: rng.gen_bool(0.4),
        })
        .collect();
    grad_examples[0].misclassified = true;
    grad_examples[1].misclassified = false;
    let grad_cfg = FitConfig::default();
    let mut worst_rel = 0.0f64;
    for _ in 0..3 {
        let params = CombinerParams {
            weights: [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ],
            bias: rng.gen_range(-2.0..2.0),
        };
        let (gw, gb) = fit_gradient(&grad_examples, &params, &grad_cfg).unwrap();
        let h = 1e-6;
        for k in 0..5 {
            let mut plus = params;
            let mut minus = params;
            if k < 4 {
                plus.weights[k] += h;
                minus.weights[k] -= h;
            } else {
                plus.bias += h;
                minus.bias -= h;
            }
            let numeric = (fit_objective(&grad_examples, &plus, &grad_cfg).unwrap()
                - fit_objective(&grad_examples, &minus, &grad_cfg).unwrap())
                / (2.0 * h);
            let analytic = if k < 4 { gw[k] } else { gb };
            worst_rel = worst_rel.max((analytic - numeric).abs() / numeric.abs().max(1e-8));
        }
    }

    // Monotone objective on a fitted run.
    let trace_report = fit_combiner(&grad_examples, &grad_cfg).unwrap();
    let monotone = trace_report.objective_trace.windows(2).all(|w| w[1] <= w[0]);

    let ok = recovery <= 0.15 && worst_rel <= 1e-5 && monotone;
    report(
        "c7 combiner fitting",
        ok,
        &format!(
            "recovery error {recovery:.4}, worst gradient mismatch {worst_rel:.2e}, \
             objective monotone {monotone} over {} iterations",
            trace_report.iterations
        ),
    );
}

#[test]
fn c8_cold_start_safety() {
    let _serial = serial();
    let mut featureless_model = GeneratorModel::default();
    featureless_model.emit_features = false;
    let streams = vec![
        id_stream(200, 8801),
        stream(8802, vec![SegmentSpec::new(SegmentKind::OutOfDistribution, 200)]),
        stream(8803, vec![SegmentSpec::new(SegmentKind::Corrupted { severity: 5 }, 200)]),
        generate(&StreamSpec {
            model: featureless_model,
            base_seed: 8804,
            segments: vec![SegmentSpec::new(SegmentKind::InDistribution, 200)],
        })
        .unwrap(),
    ];

    let mut checked = 0usize;
    for records in &streams {
        let feature_dim = records[0].feature.as_ref().map(Vec::len);
        for quantized in [false, true] {
            let config = MonitorConfig::with_combiner(bench_combiner());
            let warmup = config.calib.warmup_steps;
            let mut monitor = if quantized {
                Monitor::new_quantized(config, 10, feature_dim).unwrap()
            } else {
                Monitor::new_float(config, 10, feature_dim).unwrap()
            };
            let outputs = run_monitor(&mut monitor, records);

            assert!(
                outputs[..warmup].iter().all(|o| !o.decision.abstained()),
                "abstention during warm-up (quantized: {quantized})"
            );

            let first = outputs[0].signals;
            assert_eq!(first.divergence, 0.0, "cold-start divergence");
            assert_eq!(first.instability, 0.0, "cold-start instability");
            assert_eq!(first.inconsistency, 0.0, "cold-start inconsistency");
            let proxy = confidence_proxy(&records[0].posterior, DEFAULT_PROXY_BLEND).unwrap();
            if quantized {
                // The quantized path reads the proxy off 8-bit codes.
                assert!(
                    (first.proxy - proxy).abs() <= 0.01,
                    "cold-start proxy {} vs {proxy}",
                    first.proxy
                );
            } else {
                assert_eq!(first.proxy, proxy, "cold-start proxy");
            }
            checked += 1;
        }
    }
    report(
        "c8 cold-start safety",
        true,
        &format!("{checked} monitor runs: zero warm-up abstentions, s0 = [0, 0, 0, m0]"),
    );
}

#[test]
fn c9_event_labeling_oracle() {
    let _serial = serial();

    // Hand-enumerated fixture, m = 20, band mean 0.95 / std 0.04
    // (event threshold 0.83), alarm threshold rho = 0.5.
    //
    //   correctness: hit at t in 0..=199 and 300..=399, miss at 200..=299
    //   confidence:  0.9 at t in 0..=209 and 310..=399, 0.3 at 210..=309
    //
    // Events (window accuracy <= 0.83 needs >= 4 misses among 20):
    //   onset t = 203 (4 misses in 184..=203), last t = 315 (4 misses in
    //   296..=315), so events are t in 203..=315: 113 steps.
    // Alarms (window confidence < 0.5 needs >= 14 low entries):
    //   onset t = 223 (14 lows in 204..=223 give 0.48), last t = 315
    //   (14 lows in 296..=315 give 0.48), with 0.51 on both shoulders,
    //   so alarms are t in 223..=315: 93 steps, all inside events.
    // Scored steps are t in 20..=399: 380 total. Hence
    //   TP = 93, FN = 113 - 93 = 20, FP = 0, TN = 380 - 113 = 267.
    let mut records = Vec::with_capacity(400);
    let mut confidences = Vec::with_capacity(400);
    for t in 0..400u64 {
        let hit = t < 200 || t >= 300;
        records.push(StreamRecord {
            t,
            posterior: vec![0.9, 0.1],
            feature: None,
            label: Some(GroundTruth::Class(usize::from(!hit))),
        });
        confidences.push(if (210..310).contains(&t) { 0.3 } else { 0.9 });
    }
    let band = IdBand { mean: 0.95, std: 0.04 };
    let counts = label_events(&records, &confidences, &band, 20, 0.5).unwrap();
    let expected = EventCounts {
        true_positives: 93,
        false_positives: 0,
        true_negatives: 267,
        false_negatives: 20,
    };
    let ok = counts == expected && counts.total() == 380;
    report(
        "c9 event labeling oracle",
        ok,
        &format!(
            "tp {} fp {} tn {} fn {} over {} scored steps",
            counts.true_positives,
            counts.false_positives,
            counts.true_negatives,
            counts.false_negatives,
            counts.total()
        ),
    );
}
