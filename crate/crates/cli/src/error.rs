//! Exit-code discipline shared by every subcommand.
//!
//! Validation errors (exit 1) mean the invocation or an input file is
//! wrong and rerunning unchanged cannot succeed: unparsable flags, bad
//! config keys, malformed streams, inconsistent dimensions. Runtime
//! errors (exit 2) mean the environment failed underneath us.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::process::ExitCode;

use driftwatch_core::streamio::StreamIoError;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

/// Tags an error with the file it came from.
pub fn at_path(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

/// A missing input is a bad argument; any other I/O failure is the
/// environment's fault.
pub fn read_error(path: &Path, e: io::Error) -> CliError {
    if e.kind() == io::ErrorKind::NotFound {
        CliError::Validation(format!("{}: no such file", path.display()))
    } else {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

pub fn write_error(path: &Path, e: io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Stream-format errors carry their own line numbers; only the
/// underlying I/O variant is a runtime failure.
pub fn stream_error(path: &Path, e: StreamIoError) -> CliError {
    match e {
        StreamIoError::Io(io) => CliError::Runtime(format!("{}: {io}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| read_error(path, e))
}
