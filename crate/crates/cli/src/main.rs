//! driftwatch: streaming uncertainty monitoring from temporal consistency.
//!
//! Exit codes: 0 on success, 1 for validation problems (bad arguments,
//! malformed files, impossible configurations), 2 for runtime faults
//! such as I/O failures on files that were expected to be writable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod config;
mod error;
mod eval;
mod fit;
mod gen;
mod genspec;
mod manifest;
mod monitor;

#[derive(Parser)]
#[command(name = "driftwatch", version, about = "Label-free uncertainty monitoring for classifier streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic posterior/feature stream from a spec file.
    Gen {
        /// Generator spec (TOML).
        spec: PathBuf,
        /// Where to write the stream.
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit combiner parameters on a labeled development stream.
    Fit {
        /// Labeled development stream.
        stream: PathBuf,
        /// Tool configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the fitted parameters.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the monitor over a stream and record per-step decisions.
    Monitor {
        /// Stream to monitor.
        stream: PathBuf,
        /// Tool configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fitted combiner parameters.
        #[arg(long)]
        params: PathBuf,
        /// Where to write the decision log.
        #[arg(long)]
        out: PathBuf,
        /// Use the quantized integer backend instead of floats.
        #[arg(long)]
        quantized: bool,
    },
    /// Score a decision log against its stream and write a report.
    Eval {
        /// The monitored stream.
        stream: PathBuf,
        /// The decision log produced by `monitor`.
        decisions: PathBuf,
        /// Tool configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the report.
        #[arg(long)]
        out: PathBuf,
        /// Clean in-distribution stream for calibrating the accuracy band.
        #[arg(long)]
        id_stream: Option<PathBuf>,
        /// Sliding-window length for accuracy-drop detection.
        #[arg(long, default_value_t = 100)]
        window_m: usize,
        /// Bin count for the calibration-error estimate.
        #[arg(long, default_value_t = 10)]
        ece_bins: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                // Usage mistakes are validation errors, not runtime faults.
                _ => ExitCode::from(1),
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Gen { spec, out, seed } => gen::run(spec, out, *seed),
        Command::Fit { stream, config, out } => fit::run(stream, config.as_deref(), out),
        Command::Monitor { stream, config, params, out, quantized } => {
            monitor::run(&monitor::MonitorArgs {
                stream,
                config: config.as_deref(),
                params,
                out,
                quantized: *quantized,
            })
        }
        Command::Eval { stream, decisions, config, out, id_stream, window_m, ece_bins } => {
            eval::run(&eval::EvalArgs {
                stream,
                decisions,
                config: config.as_deref(),
                out,
                id_stream: id_stream.as_deref(),
                window_m: *window_m,
                ece_bins: *ece_bins,
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
