//! Per-run record of resolved options, input and output checksums, and the
//! command line that reproduces the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Serialize, Debug)]
struct Artifact {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize, Debug)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    replay: Vec<String>,
    config: BTreeMap<String, Value>,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    results: BTreeMap<String, Value>,
    #[serde(skip)]
    out_dir: PathBuf,
}

fn artifact(path: &Path, bytes: &[u8]) -> Artifact {
    Artifact {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(bytes)),
    }
}

impl Manifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Manifest {
            tool: "dynhdp",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            replay: vec!["dynhdp".into(), command.into()],
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: BTreeMap::new(),
            out_dir: out_dir.to_path_buf(),
        }
    }

    /// Records resolved options; each becomes a `--flag value` pair in the
    /// replay command.
    pub fn options(&mut self, opts: &impl Serialize) -> Result<(), CliError> {
        let value = serde_json::to_value(opts).map_err(|e| CliError::input(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(CliError::input("options must serialize to a map"));
        };
        for (key, value) in map {
            self.replay.push(format!("--{}", key.replace('_', "-")));
            self.replay.push(match &value {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            });
            self.config.insert(key, value);
        }
        Ok(())
    }

    pub fn flag(&mut self, flag: &str) {
        self.replay.push(format!("--{flag}"));
        self.config.insert(flag.replace('-', "_"), Value::Bool(true));
    }

    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_owned(), value.into());
    }

    /// Reads an input file and records its checksum.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        self.inputs.push(artifact(path, &bytes));
        Ok(bytes)
    }

    pub fn note_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(artifact(path, bytes));
    }

    /// Writes `name` into the output directory and records its checksum.
    pub fn write_output(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        self.outputs.push(artifact(&path, bytes));
        Ok(path)
    }

    /// Writes `<command>.run-manifest.json` next to the outputs.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.replay.push("--out-dir".into());
        self.replay.push(self.out_dir.display().to_string());
        let mut text = serde_json::to_string_pretty(&self).map_err(|e| CliError::input(e.to_string()))?;
        text.push('\n');
        let path = self.out_dir.join(format!("{}.run-manifest.json", self.command));
        std::fs::write(&path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
