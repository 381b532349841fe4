//! Output directory handling and the per-run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to re-run a command, plus the two things that are
/// allowed to differ between runs: timestamps and timings.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub threads: usize,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputFile>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub timings: serde_json::Value,
}

/// Writes files into the output directory atomically and remembers them for
/// the manifest.
pub struct OutDir {
    root: PathBuf,
    written: Vec<OutputFile>,
    started: Instant,
    started_unix_s: u64,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let started_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Ok(Self { root: root.to_path_buf(), written: Vec::new(), started: Instant::now(), started_unix_s })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        self.written.push(OutputFile {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn write_with(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn finish(self, command: &str, seed: u64, config_hash: String, timings: serde_json::Value) -> Result<PathBuf> {
        let manifest = RunManifest {
            tool: "paretonas",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            seed,
            config_hash,
            threads: rayon::current_num_threads(),
            started_unix_s: self.started_unix_s,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            outputs: self.written,
            timings,
        };
        let path = self.root.join(format!("{command}.manifest.json"));
        write_atomic(&path, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())?;
        Ok(path)
    }
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing into {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(&dir.path().join("run")).unwrap();
        out.write("a.txt", b"hello").unwrap();
        let m = out.finish("demo", 3, "abc".into(), serde_json::Value::Null).unwrap();
        let text = std::fs::read_to_string(m).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["outputs"][0]["file"], "a.txt");
        assert_eq!(v["outputs"][0]["sha256"], "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        assert!(v.get("timings").is_none());
        assert_eq!(std::fs::read(dir.path().join("run/a.txt")).unwrap(), b"hello");
    }
}
