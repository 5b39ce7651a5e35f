//! Line-oriented text formats for streams and decision logs.
//!
//! A stream file is a header line followed by one record per line:
//!
//! ```text
//! driftwatch-stream v1 classes=3 feature_dim=2
//! 0|1|3.33333333e-1,3.33333333e-1,3.33333333e-1|1.00000000e0,-5.00000000e-1
//! 1|-|...
//! 2|-1|...
//! ```
//!
//! Sections are pipe-separated: step index, label, posterior, and (only
//! when `feature_dim > 0`) the feature vector. The label is a class
//! index, `-1` for out-of-distribution, or `-` for unlabeled. Floats are
//! written with nine significant digits (`{:.8e}`), which round-trips
//! exactly through parsing; [`wire_round`] applies the same rounding in
//! memory so that values compared before writing equal values compared
//! after reading back.
//!
//! A decision log is the monitor's per-step output:
//!
//! ```text
//! driftwatch-decisions v1
//! t|verdict|label|score|quantile|uncertainty|divergence|instability|inconsistency|proxy
//! ```
//!
//! with verdict `accept` (label = predicted class) or `abstain`
//! (label `-`).

use std::io::{self, BufRead, Write};

use crate::conformal::Verdict;
use crate::record::{GroundTruth, StreamRecord};
use crate::signals::SignalVector;
use thiserror::Error;

pub const STREAM_MAGIC: &str = "driftwatch-stream v1";
pub const DECISIONS_MAGIC: &str = "driftwatch-decisions v1";

#[derive(Debug, Error)]
pub enum StreamIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {number}: {reason}")]
    Line { number: usize, reason: String },
}

impl StreamIoError {
    fn line(number: usize, reason: impl Into<String>) -> Self {
        Self::Line { number, reason: reason.into() }
    }
}

/// Rounds to nine significant decimal digits, exactly matching a write
/// and read through the text format.
pub fn wire_round(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float always parses")
}

fn write_floats<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            w.write_all(b",")?;
        }
        write!(w, "{v:.8e}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub classes: usize,
    /// 0 when the stream carries no feature vectors.
    pub feature_dim: usize,
}

impl StreamHeader {
    pub fn for_records(records: &[StreamRecord]) -> Option<Self> {
        let first = records.first()?;
        Some(Self {
            classes: first.posterior.len(),
            feature_dim: first.feature.as_ref().map_or(0, Vec::len),
        })
    }
}

pub fn write_stream_header<W: Write>(w: &mut W, header: &StreamHeader) -> io::Result<()> {
    writeln!(w, "{STREAM_MAGIC} classes={} feature_dim={}", header.classes, header.feature_dim)
}

/// Writes one record line. The record must match the header shape.
pub fn write_record<W: Write>(
    w: &mut W,
    header: &StreamHeader,
    record: &StreamRecord,
) -> Result<(), StreamIoError> {
    if record.posterior.len() != header.classes {
        return Err(StreamIoError::Header(format!(
            "record at t={} has {} classes, header says {}",
            record.t,
            record.posterior.len(),
            header.classes
        )));
    }
    let feature_dim = record.feature.as_ref().map_or(0, Vec::len);
    if feature_dim != header.feature_dim {
        return Err(StreamIoError::Header(format!(
            "record at t={} has feature_dim {}, header says {}",
            record.t, feature_dim, header.feature_dim
        )));
    }
    write!(w, "{}|", record.t)?;
    match record.label {
        None => write!(w, "-")?,
        Some(GroundTruth::OutOfDistribution) => write!(w, "-1")?,
        Some(GroundTruth::Class(c)) => write!(w, "{c}")?,
    }
    w.write_all(b"|")?;
    write_floats(w, &record.posterior)?;
    if let Some(feature) = &record.feature {
        w.write_all(b"|")?;
        write_floats(w, feature)?;
    }
    writeln!(w)?;
    Ok(())
}

pub fn write_stream<W: Write>(w: &mut W, records: &[StreamRecord]) -> Result<(), StreamIoError> {
    let header = StreamHeader::for_records(records)
        .ok_or_else(|| StreamIoError::Header("cannot write an empty stream".into()))?;
    write_stream_header(w, &header)?;
    for record in records {
        write_record(w, &header, record)?;
    }
    Ok(())
}

/// Incremental stream reader: parses the header eagerly, then yields one
/// validated record per line. Step indices must be strictly increasing.
pub struct StreamReader<R: BufRead> {
    header: StreamHeader,
    reader: R,
    line_number: usize,
    last_t: Option<u64>,
    buf: String,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(mut reader: R) -> Result<Self, StreamIoError> {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(StreamIoError::Header("empty input".into()));
        }
        let header = parse_header(line.trim_end_matches(['\n', '\r']))?;
        Ok(Self { header, reader, line_number: 1, last_t: None, buf: String::new() })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn parse_line(&mut self) -> Result<StreamRecord, StreamIoError> {
        let number = self.line_number;
        let line = self.buf.trim_end_matches(['\n', '\r']);
        let mut sections = line.split('|');
        let t_str = sections.next().filter(|s| !s.is_empty()).ok_or_else(|| {
            StreamIoError::line(number, "missing step index")
        })?;
        let t: u64 = t_str
            .parse()
            .map_err(|_| StreamIoError::line(number, format!("bad step index {t_str:?}")))?;
        if let Some(last) = self.last_t {
            if t <= last {
                return Err(StreamIoError::line(
                    number,
                    format!("step index {t} does not increase past {last}"),
                ));
            }
        }

        let label_str =
            sections.next().ok_or_else(|| StreamIoError::line(number, "missing label"))?;
        let label = match label_str {
            "-" => None,
            "-1" => Some(GroundTruth::OutOfDistribution),
            s => Some(GroundTruth::Class(s.parse().map_err(|_| {
                StreamIoError::line(number, format!("bad label {s:?}"))
            })?)),
        };

        let posterior_str =
            sections.next().ok_or_else(|| StreamIoError::line(number, "missing posterior"))?;
        let posterior = parse_floats(posterior_str, number)?;
        if posterior.len() != self.header.classes {
            return Err(StreamIoError::line(
                number,
                format!("{} posterior entries, header says {}", posterior.len(), self.header.classes),
            ));
        }

        let feature = if self.header.feature_dim > 0 {
            let feature_str = sections
                .next()
                .ok_or_else(|| StreamIoError::line(number, "missing feature section"))?;
            let feature = parse_floats(feature_str, number)?;
            if feature.len() != self.header.feature_dim {
                return Err(StreamIoError::line(
                    number,
                    format!(
                        "{} feature entries, header says {}",
                        feature.len(),
                        self.header.feature_dim
                    ),
                ));
            }
            Some(feature)
        } else {
            None
        };
        if sections.next().is_some() {
            return Err(StreamIoError::line(number, "trailing sections"));
        }

        let record = StreamRecord { t, posterior, feature, label };
        record.validate().map_err(|e| StreamIoError::line(number, e.to_string()))?;
        if let Some(GroundTruth::Class(c)) = record.label {
            if c >= self.header.classes {
                return Err(StreamIoError::line(
                    number,
                    format!("class label {c} outside 0..{}", self.header.classes),
                ));
            }
        }
        self.last_t = Some(t);
        Ok(record)
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<StreamRecord, StreamIoError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_number += 1;
            if !self.buf.trim().is_empty() {
                return Some(self.parse_line());
            }
        }
    }
}

/// Reads a whole stream into memory.
pub fn read_stream<R: BufRead>(
    reader: R,
) -> Result<(StreamHeader, Vec<StreamRecord>), StreamIoError> {
    let reader = StreamReader::new(reader)?;
    let header = *reader.header();
    let records = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, records))
}

fn parse_header(line: &str) -> Result<StreamHeader, StreamIoError> {
    let rest = line
        .strip_prefix(STREAM_MAGIC)
        .ok_or_else(|| StreamIoError::Header(format!("expected {STREAM_MAGIC:?}, got {line:?}")))?;
    let mut classes = None;
    let mut feature_dim = None;
    for part in rest.split_whitespace() {
        if let Some(v) = part.strip_prefix("classes=") {
            classes = Some(v.parse().map_err(|_| {
                StreamIoError::Header(format!("bad classes value {v:?}"))
            })?);
        } else if let Some(v) = part.strip_prefix("feature_dim=") {
            feature_dim = Some(v.parse().map_err(|_| {
                StreamIoError::Header(format!("bad feature_dim value {v:?}"))
            })?);
        } else {
            return Err(StreamIoError::Header(format!("unknown header field {part:?}")));
        }
    }
    let classes = classes.ok_or_else(|| StreamIoError::Header("missing classes".into()))?;
    let feature_dim =
        feature_dim.ok_or_else(|| StreamIoError::Header("missing feature_dim".into()))?;
    if classes < 2 {
        return Err(StreamIoError::Header(format!("classes must be at least 2, got {classes}")));
    }
    Ok(StreamHeader { classes, feature_dim })
}

fn parse_floats(section: &str, number: usize) -> Result<Vec<f64>, StreamIoError> {
    section
        .split(',')
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| StreamIoError::line(number, format!("bad float {s:?}")))
        })
        .collect()
}

/// One monitor decision with everything needed to evaluate it offline.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub t: u64,
    pub verdict: Verdict,
    /// Nonconformity score at this step.
    pub score: f64,
    /// Threshold in force before this step's update.
    pub quantile: f64,
    pub uncertainty: f64,
    pub signals: SignalVector,
}

pub fn write_decisions_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "{DECISIONS_MAGIC}")
}

pub fn write_decision_row<W: Write>(w: &mut W, row: &DecisionRow) -> io::Result<()> {
    write!(w, "{}|", row.t)?;
    match row.verdict {
        Verdict::Accept { label } => write!(w, "accept|{label}")?,
        Verdict::Abstain => write!(w, "abstain|-")?,
    }
    let s = &row.signals;
    writeln!(
        w,
        "|{:.8e}|{:.8e}|{:.8e}|{:.8e}|{:.8e}|{:.8e}|{:.8e}",
        row.score,
        row.quantile,
        row.uncertainty,
        s.divergence,
        s.instability,
        s.inconsistency,
        s.proxy
    )
}

pub fn read_decisions<R: BufRead>(reader: R) -> Result<Vec<DecisionRow>, StreamIoError> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .transpose()?
        .ok_or_else(|| StreamIoError::Header("empty input".into()))?;
    if first.trim_end() != DECISIONS_MAGIC {
        return Err(StreamIoError::Header(format!(
            "expected {DECISIONS_MAGIC:?}, got {first:?}"
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let number = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.trim_end().split('|').collect();
        if parts.len() != 10 {
            return Err(StreamIoError::line(number, format!("expected 10 sections, got {}", parts.len())));
        }
        let t = parts[0]
            .parse()
            .map_err(|_| StreamIoError::line(number, format!("bad step index {:?}", parts[0])))?;
        let verdict = match parts[1] {
            "abstain" => Verdict::Abstain,
            "accept" => Verdict::Accept {
                label: parts[2].parse().map_err(|_| {
                    StreamIoError::line(number, format!("bad accepted label {:?}", parts[2]))
                })?,
            },
            other => {
                return Err(StreamIoError::line(number, format!("bad verdict {other:?}")));
            }
        };
        let mut floats = [0.0f64; 7];
        for (k, slot) in floats.iter_mut().enumerate() {
            *slot = parts[3 + k].parse().map_err(|_| {
                StreamIoError::line(number, format!("bad float {:?}", parts[3 + k]))
            })?;
        }
        rows.push(DecisionRow {
            t,
            verdict,
            score: floats[0],
            quantile: floats[1],
            uncertainty: floats[2],
            signals: SignalVector {
                divergence: floats[3],
                instability: floats[4],
                inconsistency: floats[5],
                proxy: floats[6],
            },
        });
    }
    Ok(rows)
}
