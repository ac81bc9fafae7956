//! Per-command run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dermcascade::text::fingerprint;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::error::CliError;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'static str,
    toolkit_version: &'static str,
    config: &'a Value,
    config_hash: String,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Map::is_empty")]
    summary: &'a Map<String, Value>,
    started_at_unix: u64,
    wall_time_seconds: f64,
}

/// Collects fingerprints of what a command read and wrote.
pub struct Recorder {
    started: Instant,
    started_at_unix: u64,
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    summary: Map<String, Value>,
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("cli", "write_manifest", dermcascade::Error::Io { path: path.to_owned(), source: e })
}

/// SHA-256 of a file, or of the sorted `(relative path, file hash)` list of
/// a directory.
pub fn fingerprint_path(path: &Path) -> Result<String, CliError> {
    if path.is_dir() {
        let mut entries = Vec::new();
        collect(path, path, &mut entries)?;
        entries.sort();
        Ok(fingerprint(entries.join("\n").as_bytes()))
    } else {
        let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
        Ok(fingerprint(&bytes))
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), CliError> {
    for entry in std::fs::read_dir(dir).map_err(|e| io_error(dir, e))? {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walked from root").to_string_lossy().into_owned();
            out.push(format!("{rel}\t{}", fingerprint_path(&path)?));
        }
    }
    Ok(())
}

impl Recorder {
    pub fn start(out: &Path) -> Self {
        Recorder {
            started: Instant::now(),
            started_at_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            out: out.to_owned(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: Map::new(),
        }
    }

    /// Record something read. Paths inside the output directory are written
    /// as `$OUT/...` so reruns into another directory compare equal.
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(portable(&self.out, path), fingerprint_path(path)?);
        Ok(())
    }

    /// Record an artifact; paths inside the output directory are keyed
    /// relative to it.
    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let key = path.strip_prefix(&self.out).unwrap_or(path).display().to_string();
        self.outputs.insert(key, fingerprint_path(path)?);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_owned(), serde_json::to_value(value).expect("summary values serialize"));
    }

    /// Write `OUT/<command>.manifest.json`.
    pub fn finish(self, config: &RunConfig) -> Result<PathBuf, CliError> {
        let mut config_value = serde_json::to_value(config).expect("config serializes");
        relocate(&self.out, &mut config_value);
        let config_json = config_value.to_string();
        let manifest = Manifest {
            command: config.command,
            toolkit_version: TOOLKIT_VERSION,
            config: &config_value,
            config_hash: fingerprint(config_json.as_bytes()),
            inputs: &self.inputs,
            outputs: &self.outputs,
            summary: &self.summary,
            started_at_unix: self.started_at_unix,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        std::fs::create_dir_all(&self.out).map_err(|e| io_error(&self.out, e))?;
        let path = self.out.join(format!("{}.manifest.json", config.command));
        let data = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, data).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

fn portable(out: &Path, path: &Path) -> String {
    match path.strip_prefix(out) {
        Ok(rel) => format!("$OUT/{}", rel.display()),
        Err(_) => path.display().to_string(),
    }
}

fn relocate(out: &Path, value: &mut Value) {
    match value {
        Value::String(s) => *s = portable(out, Path::new(s.as_str())),
        Value::Array(items) => items.iter_mut().for_each(|v| relocate(out, v)),
        Value::Object(map) => map.values_mut().for_each(|v| relocate(out, v)),
        _ => {}
    }
}
