//! Output directory bookkeeping: atomic writes, config-hash headers and
//! `manifest.json`.

use crate::config::{config_hash, sha256_hex, ExperimentConfig};
use crate::error::CliError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use vulforge::artifact;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub sha256: String,
    pub config_hash: String,
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Config echo by hash.
    pub configs: BTreeMap<String, Value>,
    /// Paths relative to the output directory, `/`-separated.
    pub files: BTreeMap<String, FileRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            configs: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Self, CliError> {
        let path = out.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        artifact::read_json(&path).map_err(CliError::io(&path))
    }
}

#[derive(Serialize)]
struct Header<'a, T: Serialize> {
    schema_version: u32,
    config_hash: &'a str,
    command: &'a str,
    config: &'a Value,
    #[serde(flatten)]
    body: &'a T,
}

pub struct Workspace {
    pub out: PathBuf,
    pub config: ExperimentConfig,
    pub hash: String,
    echo: Value,
    command: String,
    manifest: Manifest,
}

impl Workspace {
    pub fn open(out: &Path, config: ExperimentConfig, command: &str) -> Result<Self, CliError> {
        let manifest = Manifest::load(out)?;
        let echo = config.echo();
        Ok(Self {
            out: out.to_path_buf(),
            hash: config_hash(&echo),
            config,
            echo,
            command: command.to_string(),
            manifest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn echo(&self) -> &Value {
        &self.echo
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    /// Records an already written file in the manifest.
    pub fn record(&mut self, rel: &str) -> Result<(), CliError> {
        let path = self.path(rel);
        let bytes = std::fs::read(&path).map_err(CliError::io(&path))?;
        self.manifest.files.insert(
            rel.to_string(),
            FileRecord {
                sha256: sha256_hex(&bytes),
                config_hash: self.hash.clone(),
                command: self.command.clone(),
            },
        );
        Ok(())
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(rel);
        artifact::write_atomic(&path, bytes).map_err(CliError::io(&path))?;
        self.record(rel)
    }

    /// JSON object `body` prefixed with schema version, config hash,
    /// command and config echo.
    pub fn write_json<T: Serialize>(&mut self, rel: &str, body: &T) -> Result<(), CliError> {
        let header = Header {
            schema_version: SCHEMA_VERSION,
            config_hash: &self.hash,
            command: &self.command,
            config: &self.echo,
            body,
        };
        let mut bytes = serde_json::to_vec_pretty(&header).map_err(|e| CliError::Data(e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    /// JSON whose type already carries its own `config_hash`.
    pub fn write_plain_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str, produced_by: &str) -> Result<T, CliError> {
        let path = self.path(rel);
        if !path.exists() {
            return Err(CliError::ProtocolOrder(format!(
                "{} is missing; run `{produced_by}` first",
                path.display()
            )));
        }
        artifact::read_json(&path).map_err(CliError::io(&path))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.manifest.configs.insert(self.hash.clone(), self.echo.clone());
        let used: std::collections::BTreeSet<&String> =
            self.manifest.files.values().map(|f| &f.config_hash).collect();
        let configs = std::mem::take(&mut self.manifest.configs);
        self.manifest.configs = configs.into_iter().filter(|(h, _)| used.contains(h)).collect();
        let path = self.out.join(MANIFEST);
        artifact::write_json(&path, &self.manifest).map_err(CliError::io(&path))
    }
}

/// Checks every manifest entry: the file exists, its digest matches, its
/// config is known and hashes to its key, and JSON files carry that hash.
pub fn verify(out: &Path) -> Result<usize, CliError> {
    let path = out.join(MANIFEST);
    if !path.exists() {
        return Err(CliError::ProtocolOrder(format!("{} is missing", path.display())));
    }
    let manifest: Manifest = artifact::read_json(&path).map_err(CliError::io(&path))?;
    let mut problems = Vec::new();
    for (hash, echo) in &manifest.configs {
        let actual = config_hash(echo);
        if &actual != hash {
            problems.push(format!("config {hash} rehashes to {actual}"));
        }
    }
    for (rel, rec) in &manifest.files {
        let file = out.join(rel);
        let Ok(bytes) = std::fs::read(&file) else {
            problems.push(format!("{rel}: missing"));
            continue;
        };
        if sha256_hex(&bytes) != rec.sha256 {
            problems.push(format!("{rel}: content changed"));
        }
        if !manifest.configs.contains_key(&rec.config_hash) {
            problems.push(format!("{rel}: unknown config {}", rec.config_hash));
        }
        if rel.ends_with(".json") {
            match serde_json::from_slice::<Value>(&bytes) {
                Ok(v) => match v.get("config_hash").and_then(Value::as_str) {
                    Some(h) if h == rec.config_hash => {}
                    Some(h) => problems.push(format!("{rel}: embeds config hash {h}, manifest says {}", rec.config_hash)),
                    None => problems.push(format!("{rel}: no embedded config hash")),
                },
                Err(e) => problems.push(format!("{rel}: not JSON ({e})")),
            }
        }
    }
    if problems.is_empty() {
        Ok(manifest.files.len())
    } else {
        Err(CliError::Verify(problems.join("\n")))
    }
}
