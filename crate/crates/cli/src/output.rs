//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// False for files that were already in the directory and not written by this run.
    pub produced: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Measured {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_log_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_cfg: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub status: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileEntry>,
    pub measured: Measured,
    pub timings_ms: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

/// Collects the outputs of one run.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
    timings: BTreeMap<String, f64>,
    pub measured: Measured,
}

impl OutputDir {
    /// Creates `root` and removes the files named by a previous manifest in it.
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        let old = root.join(MANIFEST);
        if let Ok(text) = fs::read_to_string(&old) {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
                for f in v["files"].as_array().into_iter().flatten() {
                    if let (Some(p), Some(true)) = (f["path"].as_str(), f["produced"].as_bool()) {
                        let target = root.join(p);
                        if !p.contains("..") && target.is_file() {
                            fs::remove_file(target)?;
                        }
                    }
                }
            }
            fs::remove_file(old)?;
        }
        Ok(Self { root: root.to_path_buf(), written: Vec::new(), timings: BTreeMap::new(), measured: Measured::default() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.root.join(name), bytes)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Runs `f` and records its wall time under `label`.
    pub fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let t = Instant::now();
        let out = f(self);
        self.timings.insert(label.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    /// Hashes every file under the directory and writes the manifest last.
    pub fn finish(
        self,
        subcommand: &str,
        status: &str,
        config: BTreeMap<String, String>,
        inputs: Vec<FileEntry>,
    ) -> std::io::Result<Manifest> {
        let mut files = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let rel = path.strip_prefix(&self.root).expect("under root").to_string_lossy().replace('\\', "/");
                if rel == MANIFEST {
                    continue;
                }
                let bytes = fs::read(&path)?;
                files.push(FileEntry {
                    produced: self.written.contains(&rel),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                    path: rel,
                });
            }
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            artifact: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            status: status.to_string(),
            config,
            inputs,
            measured: self.measured,
            timings_ms: self.timings,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST), text.as_bytes())?;
        Ok(manifest)
    }
}

/// Hash entry for an input file such as the config.
pub fn input_entry(path: &Path) -> std::io::Result<FileEntry> {
    let bytes = fs::read(path)?;
    Ok(FileEntry { path: path.display().to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64, produced: false })
}

/// Formats a float for CSV: shortest round-trip representation, `.` separator.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn coords(site: &[i32]) -> String {
    site.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn coord_header(dim: usize) -> String {
    (1..=dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_every_file_and_replaces_stale_outputs() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("notes.txt"), "mine").unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.csv", b"x\n1\n").unwrap();
        let m = out.finish("green", "ok", BTreeMap::new(), Vec::new()).unwrap();
        let names: Vec<(&str, bool)> = m.files.iter().map(|f| (f.path.as_str(), f.produced)).collect();
        assert_eq!(names, vec![("a.csv", true), ("notes.txt", false)]);
        assert_eq!(m.files[0].sha256, sha256_hex(b"x\n1\n"));

        let out = OutputDir::create(dir.path()).unwrap();
        assert!(!dir.path().join("a.csv").exists() && dir.path().join("notes.txt").exists());
        out.finish("green", "ok", BTreeMap::new(), Vec::new()).unwrap();
    }

    #[test]
    fn number_format() {
        assert_eq!(num(0.5), "5e-1");
        assert_eq!(num(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(num(f64::INFINITY), "inf");
    }
}
