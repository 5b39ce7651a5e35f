//! `driftwatch gen`: synthesize a stream file from a spec.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use driftwatch_core::streamgen::generate;
use driftwatch_core::streamio::write_stream;

use crate::config::ToolConfig;
use crate::error::{at_path, stream_error, write_error, CliError};
use crate::genspec::{GenSpecFile, ModelSnapshot, SegmentEntry};
use crate::manifest::{GeneratorSnapshot, RunManifest};

pub fn run(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let spec_file = GenSpecFile::load(spec_path)?;
    let spec = spec_file.to_stream_spec(seed)?;
    let records = generate(&spec).map_err(|e| at_path(spec_path, e))?;

    let file = File::create(out).map_err(|e| write_error(out, e))?;
    let mut writer = BufWriter::new(file);
    write_stream(&mut writer, &records).map_err(|e| stream_error(out, e))?;
    writer.flush().map_err(|e| write_error(out, e))?;

    let manifest = RunManifest::new("gen", &ToolConfig::default())
        .seed(spec.base_seed)
        .generator(GeneratorSnapshot {
            model: ModelSnapshot::from(&spec.model),
            segments: spec.segments.iter().map(SegmentEntry::from_segment).collect(),
        })
        .input("spec", spec_path)
        .output("stream", out);
    let manifest_path = manifest.write_beside(out)?;

    println!(
        "gen: {} steps (seed {}) -> {}; manifest {}",
        records.len(),
        spec.base_seed,
        out.display(),
        manifest_path.display()
    );
    Ok(())
}
