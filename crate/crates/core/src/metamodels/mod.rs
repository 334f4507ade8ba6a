//! Second-level learners for stacking and gating: logistic regression,
//! one-vs-rest linear SVM, a Gini random forest and k-nearest neighbours.
//!
//! All four share one contract: [`meta_fit`] on dense rows with class
//! labels, [`MetaModel::predict`] returning a [`ProbVector`].
//!
//! Defaults: lr/svm 200 epochs with L2 1e-4; rf 100 trees of depth 16 with
//! sqrt(width) features per split; knn k = 5, Euclidean.

mod forest;
mod knn;
mod logistic;
mod svm;

pub use forest::{DecisionTree, ForestConfig, ForestModel, TreeNode};
pub use knn::{KnnConfig, KnnModel};
pub use logistic::{LogisticConfig, LogisticModel};
pub use svm::{hinge_objective_and_subgradient, SvmConfig, SvmModel};

use crate::prob::{Label, ProbError, ProbVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("row has width {got}, expected {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid meta-model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaKind {
    Lr,
    Rf,
    Svm,
    Knn,
}

impl MetaKind {
    pub const ALL: [MetaKind; 4] = [MetaKind::Lr, MetaKind::Rf, MetaKind::Svm, MetaKind::Knn];

    pub fn as_str(self) -> &'static str {
        match self {
            MetaKind::Lr => "lr",
            MetaKind::Rf => "rf",
            MetaKind::Svm => "svm",
            MetaKind::Knn => "knn",
        }
    }
}

impl std::fmt::Display for MetaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetaKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lr" => Ok(MetaKind::Lr),
            "rf" => Ok(MetaKind::Rf),
            "svm" => Ok(MetaKind::Svm),
            "knn" => Ok(MetaKind::Knn),
            other => Err(format!("unknown meta-model {other:?} (lr|rf|svm|knn)")),
        }
    }
}

/// Hyperparameters for every kind; only the selected kind's block is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetaConfig {
    #[serde(default)]
    pub lr: LogisticConfig,
    #[serde(default)]
    pub svm: SvmConfig,
    #[serde(default)]
    pub rf: ForestConfig,
    #[serde(default)]
    pub knn: KnnConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetaModel {
    Lr(LogisticModel),
    Rf(ForestModel),
    Svm(SvmModel),
    Knn(KnnModel),
}

/// Checks shapes shared by every kind; returns the row width.
pub(crate) fn check_training_set(
    x: &[Vec<f64>],
    y: &[Label],
    classes: usize,
) -> Result<usize, MetaError> {
    if x.is_empty() {
        return Err(MetaError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(MetaError::LengthMismatch {
            rows: x.len(),
            labels: y.len(),
        });
    }
    if classes < 2 {
        return Err(MetaError::InvalidConfig("at least two classes are needed".into()));
    }
    let width = x[0].len();
    for row in x {
        if row.len() != width {
            return Err(MetaError::WidthMismatch {
                expected: width,
                got: row.len(),
            });
        }
    }
    if let Some(bad) = y.iter().find(|l| l.0 >= classes) {
        return Err(MetaError::LabelOutOfRange {
            label: bad.0,
            classes,
        });
    }
    Ok(width)
}

/// Trains a meta-model of `kind` on rows `x` with labels `y`.
pub fn meta_fit(
    kind: MetaKind,
    x: &[Vec<f64>],
    y: &[Label],
    classes: usize,
    cfg: &MetaConfig,
    seed: u64,
) -> Result<MetaModel, MetaError> {
    Ok(match kind {
        MetaKind::Lr => MetaModel::Lr(LogisticModel::fit(x, y, classes, &cfg.lr, seed)?),
        MetaKind::Svm => MetaModel::Svm(SvmModel::fit(x, y, classes, &cfg.svm)?),
        MetaKind::Rf => MetaModel::Rf(ForestModel::fit(x, y, classes, &cfg.rf, seed)?),
        MetaKind::Knn => MetaModel::Knn(KnnModel::fit(x, y, classes, &cfg.knn)?),
    })
}

impl MetaModel {
    pub fn kind(&self) -> MetaKind {
        match self {
            MetaModel::Lr(_) => MetaKind::Lr,
            MetaModel::Rf(_) => MetaKind::Rf,
            MetaModel::Svm(_) => MetaKind::Svm,
            MetaModel::Knn(_) => MetaKind::Knn,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            MetaModel::Lr(m) => m.input_width(),
            MetaModel::Rf(m) => m.input_width(),
            MetaModel::Svm(m) => m.input_width(),
            MetaModel::Knn(m) => m.input_width(),
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            MetaModel::Lr(m) => m.classes(),
            MetaModel::Rf(m) => m.classes(),
            MetaModel::Svm(m) => m.classes(),
            MetaModel::Knn(m) => m.classes(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<ProbVector, MetaError> {
        if x.len() != self.input_width() {
            return Err(MetaError::WidthMismatch {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        let probs = match self {
            MetaModel::Lr(m) => m.predict_dense(x),
            MetaModel::Rf(m) => m.predict_raw(x),
            MetaModel::Svm(m) => m.predict_raw(x),
            MetaModel::Knn(m) => m.predict_raw(x),
        };
        Ok(ProbVector::from_internal(probs)?)
    }
}

/// Free-function form of [`MetaModel::predict`].
pub fn meta_predict(m: &MetaModel, x: &[f64]) -> Result<ProbVector, MetaError> {
    m.predict(x)
}
