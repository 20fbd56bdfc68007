//! Artifact naming and the run manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{RunConfig, SCHEMA_VERSION};

/// Files of one run share the prefix `<experiment>-<timestamp>`.
pub struct Artifacts {
    dir: PathBuf,
    prefix: String,
    written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, experiment: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ");
        let base = format!("{experiment}-{stamp}");
        let mut prefix = base.clone();
        let mut n = 1;
        while dir.join(format!("{prefix}.manifest.json")).exists() {
            prefix = format!("{base}-{n}");
            n += 1;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            prefix,
            written: Vec::new(),
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn claim(&mut self, suffix: &str) -> PathBuf {
        let name = format!("{}.{suffix}", self.prefix);
        let path = self.dir.join(&name);
        self.written.push(name);
        path
    }

    /// Opens `<prefix>.<suffix>` for writing.
    pub fn file(&mut self, suffix: &str) -> Result<BufWriter<File>> {
        let path = self.claim(suffix);
        let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&mut self, suffix: &str, value: &T) -> Result<()> {
        let path = self.claim(suffix);
        fpk_core::io::write_json(&path, value).with_context(|| format!("cannot write {}", path.display()))
    }

    /// Writes the manifest last so that its file list is complete.
    pub fn finish(mut self, config: &RunConfig, status: &str, summary: serde_json::Value) -> Result<PathBuf> {
        let name = format!("{}.manifest.json", self.prefix);
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            tool: "fpk",
            version: env!("CARGO_PKG_VERSION"),
            experiment: config.experiment.name(),
            seed: config.seed,
            status,
            artifacts: std::mem::take(&mut self.written),
            summary,
            config,
        };
        let path = self.dir.join(name);
        fpk_core::io::write_json(&path, &manifest).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    seed: u64,
    status: &'a str,
    artifacts: Vec<String>,
    summary: serde_json::Value,
    config: &'a RunConfig,
}
