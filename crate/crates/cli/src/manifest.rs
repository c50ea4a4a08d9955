//! Run manifests: what a command read, wrote and how long it took.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub working_dir: PathBuf,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub timings: Vec<Timing>,
    pub status: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects the manifest of one command while it runs.
pub struct Run {
    command: String,
    args: Vec<String>,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: Vec<Timing>,
    phase_start: Instant,
}

impl Run {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            args,
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            phase_start: Instant::now(),
        }
    }

    pub fn seeds(&mut self, seeds: impl IntoIterator<Item = u64>) {
        self.seeds.extend(seeds);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_path_buf());
        }
    }

    /// Closes the current phase under `name`.
    pub fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.push(Timing {
            phase: name.into(),
            seconds: (now - self.phase_start).as_secs_f64(),
        });
        self.phase_start = now;
    }

    /// Hashes every listed file and writes the manifest to `path`.
    pub fn finish(self, path: &Path, ok: bool) -> Result<RunManifest> {
        let entries = |paths: &[PathBuf]| -> Result<Vec<FileEntry>> {
            paths
                .iter()
                .filter(|p| p.exists())
                .map(|p| {
                    Ok(FileEntry {
                        path: p.clone(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            tool: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            command: self.command,
            args: self.args,
            working_dir: std::env::current_dir()?,
            config: self.config,
            seeds: self.seeds,
            inputs: entries(&self.inputs)?,
            outputs: entries(&self.outputs)?,
            timings: self.timings,
            status: if ok { "ok" } else { "failed" }.into(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn finish_lists_existing_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.csv");
        std::fs::write(&out, "x\n").unwrap();
        let mut run = Run::new("generate", vec!["generate".into()], serde_json::json!({"seed": 1}));
        run.output(&out);
        run.output(&out);
        run.seeds([1]);
        run.phase("all");
        let m = run.finish(&dir.path().join("m.json"), true).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(RunManifest::load(&dir.path().join("m.json")).unwrap(), m);
    }
}
