//! `runs/<timestamp>-<command>/` output directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved settings of the command.
    pub config: serde_json::Value,
    pub dataset: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Paths relative to `output_dir`.
    pub artifacts: Vec<String>,
    pub started_at: String,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

pub struct RunDir {
    command: String,
    path: PathBuf,
    started: Instant,
    started_at: String,
    artifacts: Vec<String>,
}

impl RunDir {
    /// Creates a fresh `<root>/<timestamp>-<command>` directory, adding a
    /// numeric suffix if that name is taken.
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("creating output root {}", root.display()))?;
        let now = chrono::Local::now();
        let stamp = now.format("%Y%m%d-%H%M%S-%3f");
        let mut attempt = 0;
        let path = loop {
            let name = if attempt == 0 {
                format!("{stamp}-{command}")
            } else {
                format!("{stamp}-{command}-{attempt}")
            };
            let candidate = root.join(name);
            match fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => attempt += 1,
                Err(e) => {
                    return Err(e).with_context(|| format!("creating {}", candidate.display()))
                }
            }
        };
        Ok(Self {
            command: command.to_string(),
            path,
            started: Instant::now(),
            started_at: now.to_rfc3339(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes `contents` to `relative`, creating parent directories.
    pub fn write(&mut self, relative: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let target = self.path.join(relative);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&target, contents).with_context(|| format!("writing {}", target.display()))?;
        self.record(relative);
        Ok(target)
    }

    /// Registers a file some other routine wrote inside the run directory.
    pub fn record(&mut self, relative: &str) {
        if !self.artifacts.iter().any(|a| a == relative) {
            self.artifacts.push(relative.to_string());
        }
    }

    pub fn finish(
        self,
        config: serde_json::Value,
        dataset: Option<&Path>,
        seed: Option<u64>,
    ) -> Result<RunManifest> {
        for a in &self.artifacts {
            let p = self.path.join(a);
            anyhow::ensure!(p.exists(), "artifact {} is missing", p.display());
        }
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            config,
            dataset: dataset.map(absolute),
            seed,
            output_dir: absolute(&self.path),
            artifacts: self.artifacts,
            started_at: self.started_at,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        let target = self.path.join(MANIFEST);
        fs::write(&target, text).with_context(|| format!("writing {}", target.display()))?;
        Ok(manifest)
    }
}

pub fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| {
        std::env::current_dir()
            .map(|d| d.join(p))
            .unwrap_or_else(|_| p.to_path_buf())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_written_artifacts() {
        let root = tempfile::tempdir().unwrap();
        let mut a = RunDir::create(root.path(), "train").unwrap();
        let b = RunDir::create(root.path(), "train").unwrap();
        assert_ne!(a.path(), b.path());
        a.write("series/x.csv", "epoch,value\n").unwrap();
        a.write("metrics.json", "{}").unwrap();
        let dir = a.path().to_path_buf();
        let m = a.finish(serde_json::json!({"k": 1}), None, Some(4)).unwrap();
        assert_eq!(m.artifacts, ["series/x.csv", "metrics.json"]);
        assert_eq!(RunManifest::load(&dir).unwrap(), m);
    }
}
