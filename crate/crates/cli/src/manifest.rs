use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

/// Record of one artifact-producing command, written beside its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// The merged configuration the command actually ran with.
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Command-specific results: counts, losses, warnings.
    pub report: Value,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub library_version: String,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    started_unix: u64,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self { command: command.into(), started: Instant::now(), started_unix }
    }

    pub fn finish(
        self,
        config: Value,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        report: Value,
    ) -> RunManifest {
        RunManifest {
            command: self.command,
            config,
            seed,
            inputs,
            outputs,
            report,
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            library_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// `dir/manifest.json` for directory outputs, `file.manifest.json` otherwise.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

pub fn write_manifest(path: &Path, m: &RunManifest) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(m).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_paths() {
        assert_eq!(manifest_path(Path::new("out/data.jsonl"), false), PathBuf::from("out/data.jsonl.manifest.json"));
        assert_eq!(manifest_path(Path::new("svgs"), true), PathBuf::from("svgs/manifest.json"));
    }
}
