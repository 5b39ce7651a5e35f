//! Run manifests: the reproducibility sidecar written beside every
//! output. A manifest pins the command, tool version, every input and
//! output path, the seed when one was involved, and the full resolved
//! configuration. It deliberately carries no timestamps or host
//! information, so identical runs produce byte-identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ToolConfig;
use crate::error::{write_error, CliError};
use crate::genspec::{ModelSnapshot, SegmentEntry};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Signal backend for monitor runs: `float` or `quantized`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<&'static str>,
    pub inputs: BTreeMap<&'static str, String>,
    pub outputs: BTreeMap<&'static str, String>,
    /// Every signal and calibration knob in force, fallbacks resolved.
    pub config: ToolConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSnapshot>,
}

#[derive(Debug, Serialize)]
pub struct GeneratorSnapshot {
    pub model: ModelSnapshot,
    pub segments: Vec<SegmentEntry>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: &ToolConfig) -> Self {
        Self {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: None,
            backend: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            config: config.resolved(),
            generator: None,
        }
    }

    pub fn input(mut self, key: &'static str, path: &Path) -> Self {
        self.inputs.insert(key, path.display().to_string());
        self
    }

    pub fn output(mut self, key: &'static str, path: &Path) -> Self {
        self.outputs.insert(key, path.display().to_string());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn backend(mut self, backend: &'static str) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn generator(mut self, generator: GeneratorSnapshot) -> Self {
        self.generator = Some(generator);
        self
    }

    /// Writes `<out>.manifest.toml` and returns its path.
    pub fn write_beside(&self, out: &Path) -> Result<PathBuf, CliError> {
        let path = manifest_path(out);
        let text = toml::to_string(self).expect("manifest serializes infallibly");
        fs::write(&path, text).map_err(|e| write_error(&path, e))?;
        Ok(path)
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".manifest.toml");
    PathBuf::from(name)
}
