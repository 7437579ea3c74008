//! Output directory bookkeeping: run manifest, CSV with a `#` header block,
//! JSON reports, and cleanup of partial outputs on failure.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "run_manifest.json";

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub scenario: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
    pub files: Vec<String>,
}

/// Output directory of one command. Files are registered as they are
/// written; `abandon` deletes them again.
pub struct OutputDir {
    root: PathBuf,
    created_root: bool,
    manifest: RunManifest,
}

impl OutputDir {
    pub fn create(root: &Path, manifest: RunManifest) -> io::Result<Self> {
        let created_root = !root.exists();
        fs::create_dir_all(root)?;
        let mut out = Self {
            root: root.to_path_buf(),
            created_root,
            manifest,
        };
        out.manifest.files = vec![MANIFEST.to_string()];
        out.write_manifest()?;
        Ok(out)
    }

    pub fn header(&self) -> Vec<String> {
        vec![
            format!("scenario_sha256={}", self.manifest.scenario_sha256),
            format!("seed={}", self.manifest.seed),
            format!("command={}", self.manifest.command),
            format!("version={}", self.manifest.version),
        ]
    }

    fn write_manifest(&self) -> io::Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest).map_err(io::Error::other)?;
        fs::write(self.root.join(MANIFEST), json + "\n")
    }

    fn register(&mut self, name: &str) {
        if !self.manifest.files.iter().any(|f| f == name) {
            self.manifest.files.push(name.to_string());
        }
    }

    /// Writes CSV rows below a `# key=value` header block.
    pub fn write_csv(&mut self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
        self.register(name);
        let mut text = String::new();
        for line in self.header() {
            text.push_str("# ");
            text.push_str(&line);
            text.push('\n');
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(columns).map_err(io::Error::other)?;
        for row in rows {
            writer.write_record(row).map_err(io::Error::other)?;
        }
        let body = writer.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
        text.push_str(std::str::from_utf8(&body).map_err(io::Error::other)?);
        fs::write(self.root.join(name), text)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        self.register(name);
        fs::write(self.root.join(name), to_json(value)?)
    }

    pub fn finish(mut self) -> io::Result<PathBuf> {
        self.manifest.finished_unix = Some(unix_now());
        self.manifest.status = "complete".into();
        self.write_manifest()?;
        Ok(self.root)
    }

    /// Removes every file this run wrote, and the directory if it created it.
    pub fn abandon(self) {
        for name in &self.manifest.files {
            let _ = fs::remove_file(self.root.join(name));
        }
        if self.created_root {
            let _ = fs::remove_dir(&self.root);
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> io::Result<String> {
    Ok(serde_json::to_string_pretty(value).map_err(io::Error::other)? + "\n")
}

pub fn new_manifest(command: &str, scenario: &Path, scenario_bytes: &[u8], seed: u64, workers: Option<usize>) -> RunManifest {
    RunManifest {
        artifact: "asl".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        scenario: scenario.display().to_string(),
        scenario_sha256: sha256_hex(scenario_bytes),
        seed,
        workers,
        started_unix: unix_now(),
        finished_unix: None,
        status: "running".into(),
        files: Vec::new(),
    }
}

/// Data rows of a CSV written by [`OutputDir::write_csv`], header comments skipped.
pub fn read_csv(path: &Path) -> io::Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(io::Error::other)?;
    let columns = reader
        .headers()
        .map_err(io::Error::other)?
        .iter()
        .map(String::from)
        .collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(String::from).collect()).map_err(io::Error::other))
        .collect::<io::Result<_>>()?;
    Ok((columns, rows))
}
