//! Output directories, content hashes and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "run_config.toml";

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_fp: String,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub artifacts: Vec<ArtifactEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// An output directory being filled by one subcommand.
pub struct OutputDir {
    root: PathBuf,
    command: String,
    config_fp: String,
    seed: u64,
    started: f64,
    written: Vec<PathBuf>,
}

impl OutputDir {
    /// Creates `root` and records the resolved config in it.
    pub fn create(root: &Path, command: &str, config: &RunConfig) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let out = Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            config_fp: config.fingerprint(),
            seed: config.seed,
            started: now(),
            written: Vec::new(),
        };
        let cfg_path = root.join(CONFIG_FILE);
        fs::write(&cfg_path, config.to_toml()?).map_err(|e| CliError::io(&cfg_path, e))?;
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_fp(&self) -> &str {
        &self.config_fp
    }

    /// Path for a new artifact, creating parent directories.
    pub fn path(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        Ok(p)
    }

    /// Marks an artifact for the manifest once it has been written.
    pub fn record(&mut self, path: PathBuf) {
        if !self.written.contains(&path) {
            self.written.push(path);
        }
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let p = self.path(rel)?;
        let mut f = fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
        f.write_all(bytes).map_err(|e| CliError::io(&p, e))?;
        self.record(p.clone());
        Ok(p)
    }

    /// Writes a header row and records, all rendered to strings.
    pub fn write_csv<I, R>(&mut self, rel: &str, header: &[&str], rows: I) -> CliResult<PathBuf>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.write_bytes(rel, &bytes)
    }

    pub fn finish(self) -> CliResult<RunManifest> {
        let mut artifacts = Vec::with_capacity(self.written.len());
        for p in &self.written {
            let rel = p
                .strip_prefix(&self.root)
                .unwrap_or(p)
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            artifacts.push(ArtifactEntry {
                path: rel,
                sha256: sha256_file(p)?,
            });
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: self.command,
            config_fp: self.config_fp,
            seed: self.seed,
            started_unix: self.started,
            finished_unix: now(),
            artifacts,
        };
        let path = self.root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
