use crate::error::CliError;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use vulforge::codefeat::FeatureConfig;
use vulforge::ensembles::{BoostVote, Routing, VoteMode};
use vulforge::ingest::Schema;
use vulforge::learners::LinearConfig;
use vulforge::metamodels::{LogisticConfig, MetaConfig, MetaKind};
use vulforge::seed::{derive_seed, streams};

/// Everything that determines an experiment's outputs. Loaded from TOML,
/// then overridden by command-line flags. The output directory is not part
/// of it, so the same experiment written to two places hashes the same.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub schema: Schema,
    pub seed: u64,
    /// Bagging members M.
    pub members: usize,
    /// Boosting rounds T.
    pub rounds: usize,
    pub vote: VoteMode,
    pub boost_vote: BoostVote,
    pub meta: MetaKind,
    pub routing: Routing,
    pub features: FeatureConfig,
    /// `learner.seed` is replaced by a value derived from `seed`.
    pub learner: LinearConfig,
    pub meta_config: MetaConfig,
    pub gate: LogisticConfig,
    pub external: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            schema: Schema::Binary,
            seed: 0,
            members: 5,
            rounds: 10,
            vote: VoteMode::Soft,
            boost_vote: BoostVote::Labels,
            meta: MetaKind::Lr,
            routing: Routing::Hard,
            features: FeatureConfig::default(),
            learner: LinearConfig::default(),
            meta_config: MetaConfig::default(),
            gate: vulforge::ensembles::DgsConfig::default().gate,
            external: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fills derived fields and checks ranges.
    pub fn finalize(mut self) -> Result<Self, CliError> {
        self.learner.seed = derive_seed(self.seed, streams::LEARNER);
        self.features.validate()?;
        if self.members == 0 {
            return Err(CliError::Config("members must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(CliError::Config("rounds must be at least 1".into()));
        }
        Ok(self)
    }

    pub fn echo(&self) -> Value {
        canonical(serde_json::to_value(self).expect("config serializes"))
    }

    pub fn hash(&self) -> String {
        config_hash(&self.echo())
    }

    pub fn dataset(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::Config("no dataset given (--dataset or `dataset` in the config file)".into()))
    }
}

/// Rebuilds every object with keys inserted in sorted order.
pub fn canonical(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, canonical(v));
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        other => other,
    }
}

/// SHA-256 hex digest of the compact canonical JSON form.
pub fn config_hash(echo: &Value) -> String {
    let bytes = serde_json::to_vec(&canonical(echo.clone())).expect("json value serializes");
    sha256_hex(&bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
