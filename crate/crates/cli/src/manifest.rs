use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Written once into every output directory. `args` is enough to reproduce
/// the run with `demoaug rerun`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Effective configuration after defaults were applied.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    /// Files written next to the manifest, sorted.
    pub outputs: Vec<String>,
    pub version: String,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<RunManifest, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Sorted names of the regular files in `dir`, excluding the manifest.
pub fn list_outputs(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_file() && name != MANIFEST {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}
