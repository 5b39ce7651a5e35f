//! `driftwatch monitor`: replay a stream through the online monitor,
//! one decision row per step.
//!
//! Records stream through without buffering the input, so memory stays
//! constant in stream length just like the monitor itself.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use driftwatch_core::streamio::{
    write_decision_row, write_decisions_header, DecisionRow, StreamReader,
};
use driftwatch_core::Monitor;

use crate::config::{ParamsFile, ToolConfig};
use crate::error::{at_path, read_error, stream_error, write_error, CliError};
use crate::manifest::RunManifest;

pub struct MonitorArgs<'a> {
    pub stream: &'a Path,
    pub config: Option<&'a Path>,
    pub params: &'a Path,
    pub out: &'a Path,
    pub quantized: bool,
}

pub fn run(args: &MonitorArgs) -> Result<(), CliError> {
    let config = ToolConfig::load(args.config)?;
    let combiner = ParamsFile::load(args.params)?;

    let file = File::open(args.stream).map_err(|e| read_error(args.stream, e))?;
    let mut reader =
        StreamReader::new(BufReader::new(file)).map_err(|e| stream_error(args.stream, e))?;
    let header = *reader.header();

    let monitor_config = config.monitor_config(combiner)?;
    let feature_dim = (header.feature_dim > 0).then_some(header.feature_dim);
    let backend = if args.quantized { "quantized" } else { "float" };
    let mut monitor = if args.quantized {
        Monitor::new_quantized(monitor_config, header.classes, feature_dim)
    } else {
        Monitor::new_float(monitor_config, header.classes, feature_dim)
    }
    .map_err(|e| CliError::Validation(format!("config: {e}")))?;

    let out_file = File::create(args.out).map_err(|e| write_error(args.out, e))?;
    let mut writer = BufWriter::new(out_file);
    write_decisions_header(&mut writer).map_err(|e| write_error(args.out, e))?;

    let mut steps = 0usize;
    let mut abstentions = 0usize;
    for item in &mut reader {
        let record = item.map_err(|e| stream_error(args.stream, e))?;
        let output = monitor
            .observe(&record.posterior, record.feature.as_deref())
            .map_err(|e| at_path(args.stream, format!("step t={}: {e}", record.t)))?;
        let row = DecisionRow {
            t: record.t,
            verdict: output.decision.verdict,
            score: output.decision.score,
            quantile: output.decision.quantile,
            uncertainty: output.uncertainty,
            signals: output.signals,
        };
        write_decision_row(&mut writer, &row).map_err(|e| write_error(args.out, e))?;
        steps += 1;
        abstentions += usize::from(output.decision.abstained());
    }
    if steps == 0 {
        return Err(at_path(args.stream, "stream has no records"));
    }
    writer.flush().map_err(|e| write_error(args.out, e))?;

    let mut manifest = RunManifest::new("monitor", &config)
        .backend(backend)
        .input("stream", args.stream)
        .input("params", args.params)
        .output("decisions", args.out);
    if let Some(p) = args.config {
        manifest = manifest.input("config", p);
    }
    let manifest_path = manifest.write_beside(args.out)?;

    println!(
        "monitor ({backend}): {steps} steps, {abstentions} abstentions (rate {:.4}) -> {}; manifest {}",
        abstentions as f64 / steps as f64,
        args.out.display(),
        manifest_path.display()
    );
    Ok(())
}
