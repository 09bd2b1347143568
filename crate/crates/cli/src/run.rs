use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug)]
pub enum CliError {
    Config { field: String, message: String },
    Failed(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 3,
            CliError::Failed(_) => 1,
        }
    }

    /// One JSON line on stderr, then the matching exit code.
    pub fn report(&self) -> ExitCode {
        let line = match self {
            CliError::Config { field, message } => json!({"error": "config", "field": field, "message": message}),
            CliError::Failed(message) => json!({"error": "failed", "message": message}),
        };
        eprintln!("{line}");
        ExitCode::from(self.exit_code())
    }
}

impl From<temporal_lulc::Error> for CliError {
    fn from(e: temporal_lulc::Error) -> Self {
        match e {
            temporal_lulc::Error::Config { field, message } => CliError::Config { field, message },
            other => CliError::Failed(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Read a TOML or JSON settings file (by extension) into `T`; no file means defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Failed(format!("reading {}: {e}", path.display())))?;
    let value: Value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| CliError::config("config", e.message().to_string()))?,
        _ => serde_json::from_str(&text).map_err(|e| CliError::config("config", e.to_string()))?,
    };
    serde_path_to_error::deserialize(value).map_err(|e| CliError::config(e.path().to_string(), e.inner().to_string()))
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub exit_status: u8,
    pub code_version: String,
}

pub struct Run {
    manifest: RunManifest,
    start: Instant,
    dest: Option<PathBuf>,
}

impl Run {
    pub fn new(subcommand: &str) -> Self {
        Self {
            manifest: RunManifest {
                subcommand: subcommand.into(),
                config: Value::Null,
                seed: None,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                wall_seconds: 0.0,
                exit_status: 0,
                code_version: temporal_lulc::models::CODE_VERSION.into(),
            },
            start: Instant::now(),
            dest: None,
        }
    }

    pub fn config<C: Serialize>(&mut self, config: &C) {
        self.manifest.config = serde_json::to_value(config).unwrap_or(Value::Null);
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest.inputs.insert(name.into(), path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    /// Directory outputs get `run_manifest.json` inside; file outputs get
    /// `<file>.run.json` beside them.
    pub fn write_to(&mut self, out: &Path, is_dir: bool) {
        self.dest = Some(if is_dir {
            out.join(RUN_MANIFEST)
        } else {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".run.json");
            out.with_file_name(name)
        });
    }

    pub fn finish(mut self, result: &CliResult<()>) {
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        self.manifest.exit_status = match result {
            Ok(()) => 0,
            Err(e) => e.exit_code(),
        };
        if let Some(dest) = &self.dest {
            if let Err(e) = write_atomic(dest, &serde_json::to_vec_pretty(&self.manifest).expect("manifest serialize")) {
                log::warn!("could not write {}: {e}", dest.display());
            }
        }
    }
}

/// Temp file in the destination directory, then rename over the target.
pub fn write_atomic(dest: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match dest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dest).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json<V: Serialize>(dest: &Path, value: &V) -> CliResult<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    write_atomic(dest, &bytes).map_err(|e| CliError::Failed(format!("writing {}: {e}", dest.display())))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("creating {}: {e}", dir.display())))
}
