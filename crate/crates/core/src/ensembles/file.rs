use super::{BaggingEnsemble, BoostEnsemble, GateModel, StackingModel};
use serde::{Deserialize, Serialize};

pub const ENSEMBLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Ensemble {
    Bagging(BaggingEnsemble),
    Boosting(BoostEnsemble),
    Stacking(StackingModel),
    Dgs(GateModel),
}

impl Ensemble {
    pub fn strategy(&self) -> &'static str {
        match self {
            Ensemble::Bagging(_) => "bagging",
            Ensemble::Boosting(_) => "boosting",
            Ensemble::Stacking(_) => "stacking",
            Ensemble::Dgs(_) => "dgs",
        }
    }
}

/// On-disk `ensemble.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub schema_version: u32,
    pub config_hash: String,
    /// Echo of the experiment config that produced the ensemble.
    pub config: serde_json::Value,
    pub ensemble: Ensemble,
}

impl EnsembleFile {
    pub fn new(ensemble: Ensemble, config: serde_json::Value, config_hash: String) -> Self {
        Self {
            schema_version: ENSEMBLE_SCHEMA_VERSION,
            config_hash,
            config,
            ensemble,
        }
    }
}
