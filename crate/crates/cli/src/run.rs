//! Output directory handling, run manifests and exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NO_SOLUTION: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] iamax_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use iamax_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Io { .. } | CliError::Core(E::Io { .. }) => EXIT_IO,
            CliError::Core(E::Infeasible(_)) => EXIT_INFEASIBLE,
            CliError::Core(E::NoSolution(_)) => EXIT_NO_SOLUTION,
            CliError::Core(_) => EXIT_VALIDATION,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_IO => "io",
            EXIT_INFEASIBLE => "infeasible",
            EXIT_NO_SOLUTION => "no_solution",
            _ => "validation",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Record of one invocation, written as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// sha256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<serde_json::Value>,
    pub wall_time_secs: f64,
}

pub struct Run {
    pub out_dir: PathBuf,
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    manifest_name: &'static str,
    started: Instant,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path, config: serde_json::Value, seed: Option<u64>) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            command: command.to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            manifest_name: "manifest.json",
            started: Instant::now(),
        })
    }

    pub fn set_manifest_name(&mut self, name: &'static str) {
        self.manifest_name = name;
    }

    /// Reads an input file and records its hash.
    pub fn read_input(&mut self, path: &Path) -> CliResult<String> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.insert(path.display().to_string(), hex::encode(Sha256::digest(text.as_bytes())));
        Ok(text)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable output");
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes `error.json` (on failure) and the manifest.
    pub fn finish(mut self, outcome: &CliResult<()>) -> CliResult<()> {
        let (exit_code, error) = match outcome {
            Ok(()) => (EXIT_OK, None),
            Err(e) => (e.exit_code(), Some(e.to_json())),
        };
        if let Some(err) = &error {
            self.write_json("error.json", err)?;
        }
        let manifest = RunManifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION"),
            config: self.config.clone(),
            seed: self.seed,
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
            exit_code,
            error,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out_dir.join(self.manifest_name);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
