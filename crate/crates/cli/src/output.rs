//! Result files: atomic writes, per-CSV sidecars and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let fail = |source| CliError::Output {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(fail)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

pub fn column(name: &str, unit: &str) -> Column {
    Column {
        name: name.into(),
        unit: unit.into(),
    }
}

/// Metadata written next to every CSV as `<stem>.meta.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Sidecar {
    pub file: String,
    pub description: String,
    pub columns: Vec<Column>,
    /// `one_sided`, `two_sided`, or absent for non-spectral tables.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sidedness: Option<serfloop::spectral::Sidedness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_averages: Option<usize>,
    /// Constants the table depends on, with where each value comes from.
    pub constants: BTreeMap<String, Value>,
    pub metadata: BTreeMap<String, Value>,
}

impl Sidecar {
    pub fn new(description: &str, columns: Vec<Column>) -> Self {
        Self {
            file: String::new(),
            description: description.into(),
            columns,
            sidedness: None,
            n_averages: None,
            constants: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn spectral(mut self, sd: &serfloop::spectral::SpectralDensity) -> Self {
        self.sidedness = Some(sd.sidedness);
        self.n_averages = Some(sd.n_averages);
        self
    }

    /// Records a constant with its value and a short note on its origin.
    pub fn constant(mut self, name: &str, value: f64, unit: &str, source: &str) -> Self {
        self.constants.insert(
            name.into(),
            serde_json::json!({ "value": value, "unit": unit, "source": source }),
        );
        self
    }

    pub fn meta(mut self, key: &str, value: impl Serialize) -> Self {
        self.metadata
            .insert(key.into(), serde_json::to_value(value).expect("metadata serializes"));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Collects everything a command writes so the manifest can list it.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl OutputSet {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            files: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileDigest] {
        &self.files
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), contents)?;
        self.files.push(FileDigest {
            path: name.into(),
            sha256: sha256_hex(contents),
            bytes: contents.len(),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("results serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `<stem>.csv` and its `<stem>.meta.json` sidecar.
    pub fn write_csv(&mut self, stem: &str, csv: &str, mut sidecar: Sidecar) -> Result<(), CliError> {
        let name = format!("{stem}.csv");
        sidecar.file = name.clone();
        self.write(&name, csv.as_bytes())?;
        self.write_json(&format!("{stem}.meta.json"), &sidecar)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario: String,
    pub seed: u64,
    /// Digest of the canonical JSON form of the effective configuration.
    pub config_sha256: String,
    pub config: Value,
    pub started_utc: String,
    pub finished_utc: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub const MANIFEST_NAME: &str = "manifest.json";
