//! Artifact writing. Floats carry 17 significant digits so every value
//! reads back bit-for-bit.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::RunError;

/// Bumped whenever a column layout changes.
pub const SCHEMA_VERSION: u32 = 1;

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Table {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    pub fn create(dir: &Path, name: &str, columns: &[&str]) -> Result<Self, RunError> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| RunError::io(&path, e))?;
        let mut writer = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
        writer.write_record(columns).map_err(|e| RunError::io(&path, e))?;
        Ok(Self { path, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), RunError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| RunError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), RunError> {
        self.writer.flush().map_err(|e| RunError::io(&self.path, e))
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), RunError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::io(&path, e))?;
    text.push('\n');
    let mut file = File::create(&path).map_err(|e| RunError::io(&path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| RunError::io(&path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))
}

/// One written file and, for tables, its columns.
#[derive(Debug, Clone, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
}

impl ArtifactEntry {
    pub fn table(file: &str, columns: &[&str]) -> Self {
        Self { file: file.into(), columns: Some(columns.iter().map(|c| c.to_string()).collect()) }
    }

    pub fn json(file: &str) -> Self {
        Self { file: file.into(), columns: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Counts {
    pub modes: usize,
    pub levels: usize,
    pub steps: usize,
    pub level_steps: Vec<usize>,
    pub paths: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub setup_seconds: f64,
    pub compute_seconds: f64,
    pub write_seconds: f64,
}

/// `manifest.json`. Everything except `timings` is a function of the
/// configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_digest: String,
    pub seed: u64,
    pub schema_version: u32,
    pub counts: Counts,
    pub c_disc: f64,
    pub artifacts: Vec<ArtifactEntry>,
    pub timings: Timings,
}
