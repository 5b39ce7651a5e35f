//! `driftwatch fit`: fit the signal combiner on a labeled development
//! stream and write the parameters file.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use driftwatch_core::fitting::{extract_dev_examples, fit_combiner, DevExample};
use driftwatch_core::streamio::read_stream;
use driftwatch_core::CombinerParams;

use crate::config::{ParamsFile, ToolConfig};
use crate::error::{at_path, read_error, stream_error, CliError};
use crate::manifest::RunManifest;

pub fn run(stream_path: &Path, config_path: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let config = ToolConfig::load(config_path)?;
    let file = File::open(stream_path).map_err(|e| read_error(stream_path, e))?;
    let (_, records) =
        read_stream(BufReader::new(file)).map_err(|e| stream_error(stream_path, e))?;

    let signal_config = config.signal_config()?;
    let examples = extract_dev_examples(&records, &signal_config, config.window)
        .map_err(|e| at_path(stream_path, e))?;
    let report =
        fit_combiner(&examples, &config.fit_config()).map_err(|e| at_path(stream_path, e))?;
    ParamsFile::save(out, &report.params)?;

    let mut manifest = RunManifest::new("fit", &config)
        .input("stream", stream_path)
        .output("params", out);
    if let Some(p) = config_path {
        manifest = manifest.input("config", p);
    }
    let manifest_path = manifest.write_beside(out)?;

    let positives = examples.iter().filter(|e| e.misclassified).count();
    let (log_loss, accuracy) = diagnostics(&examples, &report.params);
    println!("fit: {} examples, {} misclassified", examples.len(), positives);
    println!("fit: log_loss {log_loss:.6}, accuracy {accuracy:.6}");
    println!(
        "fit: converged {} after {} iterations, objective {:.6}",
        report.converged,
        report.iterations,
        report.final_objective()
    );
    println!("fit: params -> {}; manifest {}", out.display(), manifest_path.display());
    Ok(())
}

/// Unweighted mean cross-entropy and 0.5-threshold accuracy of the
/// fitted combiner on its own development set.
fn diagnostics(examples: &[DevExample], params: &CombinerParams) -> (f64, f64) {
    let mut loss = 0.0f64;
    let mut hits = 0usize;
    for example in examples {
        let s = example.signals;
        let z = params
            .weights
            .iter()
            .zip([s.divergence, s.instability, s.inconsistency, s.proxy])
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + params.bias;
        let y = f64::from(example.misclassified);
        // Stable form of -y ln sigma(z) - (1 - y) ln(1 - sigma(z)).
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        hits += usize::from((z >= 0.0) == example.misclassified);
    }
    let n = examples.len() as f64;
    (loss / n, hits as f64 / n)
}
