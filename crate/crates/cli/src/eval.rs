//! `driftwatch eval`: score a monitored run against its stream.
//!
//! The report is plain key/value text, one metric per line. Metrics
//! whose inputs are missing are never silently dropped: each absent one
//! is written out as an explicit `skipped:` line with the reason. PR and
//! ROC point lists are emitted as TSV sidecars beside the report.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use driftwatch_core::evaluation::{
    auroc, best_f1, brier, budget_adherence, drop_pr_sweep, ece, exceedance_deviation, id_band,
    median_detection_delay, nll, pr_area, roc_points, score_pr_sweep, sliding_series, EvalError,
    IdBand, PrPoint, RocPoint,
};
use driftwatch_core::record::GroundTruth;
use driftwatch_core::streamio::{read_decisions, read_stream, DecisionRow};
use driftwatch_core::StreamRecord;

use crate::config::ToolConfig;
use crate::error::{at_path, read_error, stream_error, write_error, CliError};
use crate::manifest::RunManifest;

pub struct EvalArgs<'a> {
    pub stream: &'a Path,
    pub decisions: &'a Path,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub id_stream: Option<&'a Path>,
    pub window_m: usize,
    pub ece_bins: usize,
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    if args.window_m == 0 {
        return Err(CliError::Validation("--window-m must be at least 1".into()));
    }
    if args.ece_bins == 0 {
        return Err(CliError::Validation("--ece-bins must be at least 1".into()));
    }
    let config = ToolConfig::load(args.config)?;
    let records = load_stream(args.stream)?;
    let rows = load_decisions(args.decisions)?;
    check_alignment(&records, &rows)?;

    let mut report = String::new();
    let mut sidecars: Vec<(&'static str, PathBuf)> = Vec::new();
    let out = |r: &mut String, line: &str| {
        r.push_str(line);
        r.push('\n');
    };

    out(&mut report, "driftwatch evaluation report");
    out(&mut report, "");
    stream_section(&mut report, args, &records);
    calibration_section(&mut report, &config, &rows);
    probability_section(&mut report, args.ece_bins, &records)?;
    ranking_sections(&mut report, &mut sidecars, args, &records, &rows)?;
    drop_section(&mut report, &mut sidecars, args, &records, &rows)?;

    fs::write(args.out, &report).map_err(|e| write_error(args.out, e))?;

    let mut manifest = RunManifest::new("eval", &config)
        .input("stream", args.stream)
        .input("decisions", args.decisions)
        .output("report", args.out);
    if let Some(p) = args.config {
        manifest = manifest.input("config", p);
    }
    if let Some(p) = args.id_stream {
        manifest = manifest.input("id_stream", p);
    }
    for (key, path) in &sidecars {
        manifest = manifest.output(key, path);
    }
    let manifest_path = manifest.write_beside(args.out)?;

    print!("{report}");
    println!("eval: report -> {}; manifest {}", args.out.display(), manifest_path.display());
    Ok(())
}

fn load_stream(path: &Path) -> Result<Vec<StreamRecord>, CliError> {
    let file = File::open(path).map_err(|e| read_error(path, e))?;
    let (_, records) = read_stream(BufReader::new(file)).map_err(|e| stream_error(path, e))?;
    if records.is_empty() {
        return Err(at_path(path, "stream has no records"));
    }
    Ok(records)
}

fn load_decisions(path: &Path) -> Result<Vec<DecisionRow>, CliError> {
    let file = File::open(path).map_err(|e| read_error(path, e))?;
    read_decisions(BufReader::new(file)).map_err(|e| stream_error(path, e))
}

/// The decisions file must cover the stream step for step.
fn check_alignment(records: &[StreamRecord], rows: &[DecisionRow]) -> Result<(), CliError> {
    if records.len() != rows.len() {
        return Err(CliError::Validation(format!(
            "alignment error: {} decision rows against {} stream steps",
            rows.len(),
            records.len()
        )));
    }
    for (i, (record, row)) in records.iter().zip(rows).enumerate() {
        if record.t != row.t {
            return Err(CliError::Validation(format!(
                "alignment error at row {i}: decision t={} against stream t={}",
                row.t, record.t
            )));
        }
    }
    Ok(())
}

fn stream_section(report: &mut String, args: &EvalArgs, records: &[StreamRecord]) {
    let class_labeled =
        records.iter().filter(|r| matches!(r.label, Some(GroundTruth::Class(_)))).count();
    let ood_labeled =
        records.iter().filter(|r| r.label == Some(GroundTruth::OutOfDistribution)).count();
    let _ = writeln!(
        report,
        "[stream]\npath: {}\ndecisions: {}\nsteps: {}\nclass_labeled: {}\nood_labeled: {}\nunlabeled: {}\n",
        args.stream.display(),
        args.decisions.display(),
        records.len(),
        class_labeled,
        ood_labeled,
        records.len() - class_labeled - ood_labeled,
    );
}

fn calibration_section(report: &mut String, config: &ToolConfig, rows: &[DecisionRow]) {
    let _ = writeln!(report, "[calibration]");
    let _ = writeln!(report, "alpha: {}", config.risk_level);
    let _ = writeln!(report, "warmup_steps: {}", config.warmup_steps);
    if rows.len() > config.warmup_steps {
        let tail = &rows[config.warmup_steps..];
        let scores: Vec<f64> = tail.iter().map(|r| r.score).collect();
        let quantiles: Vec<f64> = tail.iter().map(|r| r.quantile).collect();
        // Lengths match by construction; the call cannot fail.
        let deviation =
            exceedance_deviation(&scores, &quantiles, config.risk_level).expect("aligned slices");
        let _ = writeln!(report, "exceedance_deviation: {deviation:.6} ({} steps)", tail.len());
    } else {
        let _ = writeln!(report, "exceedance_deviation: skipped: stream not past warm-up");
    }
    let abstained: Vec<bool> = rows.iter().map(|r| matches!(r.verdict, driftwatch_core::Verdict::Abstain)).collect();
    let adherence = budget_adherence(&abstained, config.budget, config.burst_window)
        .expect("rows are nonempty after alignment");
    let _ = writeln!(report, "budget: {}", config.budget);
    let _ = writeln!(report, "abstain_rate: {:.6}", adherence.abstain_rate);
    let _ = writeln!(report, "budget_longrun_gap: {:.6}", adherence.longrun_gap);
    let _ = writeln!(
        report,
        "budget_worst_window_rate: {:.6} (window {})\n",
        adherence.worst_window_rate, config.burst_window
    );
}

/// Brier, negative log-likelihood, and calibration error over the
/// class-labeled steps; the posterior's own top probability is the
/// confidence.
fn probability_section(
    report: &mut String,
    bins: usize,
    records: &[StreamRecord],
) -> Result<(), CliError> {
    let mut posteriors: Vec<&[f64]> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut confidences: Vec<f64> = Vec::new();
    let mut corrects: Vec<bool> = Vec::new();
    for record in records {
        if let Some(GroundTruth::Class(c)) = record.label {
            posteriors.push(&record.posterior);
            labels.push(c);
            confidences.push(record.posterior[record.predicted()]);
            corrects.push(record.correct() == Some(true));
        }
    }
    let _ = writeln!(report, "[probability]");
    if posteriors.is_empty() {
        for key in ["brier", "nll", "ece"] {
            let _ = writeln!(report, "{key}: skipped: unlabeled");
        }
        let _ = writeln!(report);
        return Ok(());
    }
    let metric_err = |e: EvalError| CliError::Validation(format!("metrics: {e}"));
    let bs = brier(&posteriors, &labels).map_err(metric_err)?;
    let ll = nll(&posteriors, &labels).map_err(metric_err)?;
    let cal = ece(&confidences, &corrects, bins).map_err(metric_err)?;
    let _ = writeln!(report, "brier: {bs:.6}");
    let _ = writeln!(report, "nll: {ll:.6}");
    let _ = writeln!(report, "ece: {cal:.6} (bins {bins})\n");
    Ok(())
}

/// Failure-detection rankings by the nonconformity score: correct
/// in-distribution steps against misclassified ones, and against
/// out-of-distribution steps when the stream has any.
fn ranking_sections(
    report: &mut String,
    sidecars: &mut Vec<(&'static str, PathBuf)>,
    args: &EvalArgs,
    records: &[StreamRecord],
    rows: &[DecisionRow],
) -> Result<(), CliError> {
    let mut miscls_scores = Vec::new();
    let mut miscls_positive = Vec::new();
    let mut ood_scores = Vec::new();
    let mut ood_positive = Vec::new();
    let mut ood_seen = false;
    for (record, row) in records.iter().zip(rows) {
        match record.label {
            Some(GroundTruth::Class(_)) => {
                let correct = record.correct() == Some(true);
                miscls_scores.push(row.score);
                miscls_positive.push(!correct);
                if correct {
                    ood_scores.push(row.score);
                    ood_positive.push(false);
                }
            }
            Some(GroundTruth::OutOfDistribution) => {
                ood_seen = true;
                ood_scores.push(row.score);
                ood_positive.push(true);
            }
            None => {}
        }
    }

    let _ = writeln!(report, "[misclassification-ranking]");
    if miscls_scores.is_empty() {
        let _ = writeln!(report, "auroc: skipped: unlabeled");
        let _ = writeln!(report, "auprc: skipped: unlabeled\n");
    } else if miscls_positive.iter().all(|&p| p) || miscls_positive.iter().all(|&p| !p) {
        let _ = writeln!(report, "auroc: skipped: labeled outcomes are single-class");
        let _ = writeln!(report, "auprc: skipped: labeled outcomes are single-class\n");
    } else {
        emit_ranking(
            report,
            sidecars,
            args.out,
            ("miscls_pr", "miscls_roc"),
            &miscls_scores,
            &miscls_positive,
        )?;
    }

    let _ = writeln!(report, "[ood-ranking]");
    if !ood_seen {
        let _ = writeln!(report, "auroc: skipped: no out-of-distribution labels");
        let _ = writeln!(report, "auprc: skipped: no out-of-distribution labels\n");
    } else if ood_positive.iter().all(|&p| p) {
        let _ = writeln!(report, "auroc: skipped: no correctly classified in-distribution steps");
        let _ = writeln!(report, "auprc: skipped: no correctly classified in-distribution steps\n");
    } else {
        emit_ranking(
            report,
            sidecars,
            args.out,
            ("ood_pr", "ood_roc"),
            &ood_scores,
            &ood_positive,
        )?;
    }
    Ok(())
}

fn emit_ranking(
    report: &mut String,
    sidecars: &mut Vec<(&'static str, PathBuf)>,
    out: &Path,
    (pr_key, roc_key): (&'static str, &'static str),
    scores: &[f64],
    positive: &[bool],
) -> Result<(), CliError> {
    let metric_err = |e: EvalError| CliError::Validation(format!("ranking: {e}"));
    let area_roc = auroc(scores, positive).map_err(metric_err)?;
    let pr = score_pr_sweep(scores, positive).map_err(metric_err)?;
    let area_pr = pr_area(&pr).map_err(metric_err)?;
    let roc = roc_points(scores, positive).map_err(metric_err)?;
    let _ = writeln!(report, "auroc: {area_roc:.6}");
    let _ = writeln!(report, "auprc: {area_pr:.6}\n");
    sidecars.push((pr_key, write_pr_tsv(sidecar_path(out, pr_key), &pr)?));
    sidecars.push((roc_key, write_roc_tsv(sidecar_path(out, roc_key), &roc)?));
    Ok(())
}

/// Accuracy-drop detection: events are sliding-window accuracy dips
/// below the in-distribution band, ranked by the confidence window of
/// the monitor's score complement.
fn drop_section(
    report: &mut String,
    sidecars: &mut Vec<(&'static str, PathBuf)>,
    args: &EvalArgs,
    records: &[StreamRecord],
    rows: &[DecisionRow],
) -> Result<(), CliError> {
    let m = args.window_m;
    let _ = writeln!(report, "[drop-detection]");
    let _ = writeln!(report, "window_m: {m}");

    let band = match args.id_stream {
        Some(path) => {
            let reference = load_stream(path)?;
            let band = id_band(&reference, m).map_err(|e| at_path(path, e))?;
            let _ = writeln!(report, "band_source: {}", path.display());
            band
        }
        // Self-calibration is only sound when the stream is believed
        // clean; refuse quietly rather than guess on mixed streams.
        None => match id_band(records, m) {
            Ok(band) => {
                let _ = writeln!(report, "band_source: self");
                band
            }
            Err(EvalError::NotInDistribution(_)) => {
                let _ = writeln!(
                    report,
                    "band: skipped: stream is not fully in-distribution; pass --id-stream"
                );
                return Ok(());
            }
            Err(EvalError::StreamTooShort { len, window }) => {
                let _ = writeln!(
                    report,
                    "band: skipped: stream of {len} steps is too short for window {window}"
                );
                return Ok(());
            }
            Err(e) => return Err(CliError::Validation(format!("band: {e}"))),
        },
    };
    let _ = writeln!(report, "band_mean: {:.6}", band.mean);
    let _ = writeln!(report, "band_std: {:.6}", band.std);
    let _ = writeln!(report, "band_threshold: {:.6}", band.threshold());

    // Confidence series: the complement of the nonconformity score.
    let confidences: Vec<f64> = rows.iter().map(|r| 1.0 - r.score).collect();
    let scored = scored_windows(records, &confidences, &band, m)
        .map_err(|e| CliError::Validation(format!("drop-detection: {e}")))?;
    let events = scored.iter().filter(|(event, _)| *event).count();
    let _ = writeln!(report, "scored_steps: {}", scored.len());
    let _ = writeln!(report, "events: {events}");
    if scored.is_empty() {
        let _ = writeln!(report, "auprc: skipped: no scored windows\n");
        return Ok(());
    }
    if events == 0 {
        let _ = writeln!(report, "auprc: no drop events\n");
        return Ok(());
    }

    let sweep = drop_pr_sweep(records, &confidences, &band, m)
        .map_err(|e| CliError::Validation(format!("drop-detection: {e}")))?;
    let area = match pr_area(&sweep) {
        Ok(area) => area,
        Err(EvalError::Empty) => {
            let _ = writeln!(report, "auprc: skipped: degenerate confidence windows\n");
            return Ok(());
        }
        Err(e) => return Err(CliError::Validation(format!("drop-detection: {e}"))),
    };
    let _ = writeln!(report, "auprc: {area:.6}");
    sidecars.push(("drop_pr", write_pr_tsv(sidecar_path(args.out, "drop_pr"), &sweep)?));

    let best = best_f1(&sweep).expect("sweep is nonempty");
    let _ = writeln!(report, "best_f1_threshold: {:.6}", best.threshold);
    let _ = writeln!(report, "best_f1_precision: {:.6}", best.precision);
    let _ = writeln!(report, "best_f1_recall: {:.6}", best.recall);

    let event_flags: Vec<bool> = scored.iter().map(|(e, _)| *e).collect();
    let alarm_flags: Vec<bool> = scored.iter().map(|(_, c)| *c < best.threshold).collect();
    match median_detection_delay(&event_flags, &alarm_flags).expect("aligned flags") {
        Some(delay) => {
            let _ = writeln!(
                report,
                "median_detection_delay: {delay:.1} (threshold {:.6})\n",
                best.threshold
            );
        }
        None => {
            let _ = writeln!(report, "median_detection_delay: no detections\n");
        }
    }
    Ok(())
}

/// (event, confidence-window) pairs for steps where both sliding
/// windows are defined; mirrors the sweep's own population.
fn scored_windows(
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
    Ok(out)
}

fn sidecar_path(out: &Path, name: &str) -> PathBuf {
    out.with_extension(format!("{name}.tsv"))
}

fn write_pr_tsv(path: PathBuf, points: &[PrPoint]) -> Result<PathBuf, CliError> {
    let mut text = String::from("threshold\tprecision\trecall\n");
    for p in points {
        let _ = writeln!(text, "{:.8e}\t{:.8e}\t{:.8e}", p.threshold, p.precision, p.recall);
    }
    fs::write(&path, text).map_err(|e| write_error(&path, e))?;
    Ok(path)
}

fn write_roc_tsv(path: PathBuf, points: &[RocPoint]) -> Result<PathBuf, CliError> {
    let mut text = String::from("threshold\tfpr\ttpr\n");
    for p in points {
        let _ = writeln!(text, "{:.8e}\t{:.8e}\t{:.8e}", p.threshold, p.fpr, p.tpr);
    }
    fs::write(&path, text).map_err(|e| write_error(&path, e))?;
    Ok(path)
}
