//! Base learners: the built-in weighted softmax-regression surrogate over
//! hashed n-grams, and the file protocol for external models.
//!
//! External layout under an experiment directory:
//!
//! ```text
//! preds/<model_id>/<split>.jsonl        {"id": str, "probs": [f64; K]}
//! boost/round_<t>/weights.jsonl         {"id": str, "weight": f64}
//! boost/round_<t>/preds_<split>.jsonl   {"id": str, "probs": [f64; K]}
//! ```

use crate::artifact;
use crate::codefeat::{featurize_code, FeatureConfig, FeatureError, FeatureVector};
use crate::ingest::{Dataset, Split};
use crate::linear::{self, DescentConfig, SoftmaxParams, SparseRow, StepSchedule};
use crate::prob::{Label, PredictionSet, ProbError, ProbVector, INTERNAL_TOLERANCE};
use crate::seed::{derive_seed, streams, stream_rng};
use rand::distributions::{Distribution, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("sample weights do not cover the training ids exactly ({0})")]
    WeightCoverageMismatch(String),
    #[error("invalid sample weights: {0}")]
    InvalidWeights(String),
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error("feature vector has {got} dims, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("sample {0:?} is not in the feature table")]
    UnknownSample(String),
    #[error("sample {0:?} has no prediction")]
    MissingSample(String),
    #[error("malformed probability vector for {id:?}: {reason}")]
    MalformedProbVector { id: String, reason: String },
    #[error("malformed row on line {line} of {path}: {reason}")]
    MalformedRow { path: String, line: usize, reason: String },
    #[error("sample {0:?} appears twice")]
    DuplicateSample(String),
    #[error("protocol order violation: {0}")]
    ProtocolOrder(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LearnerError + '_ {
    move |source| LearnerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A probability distribution over sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    weights: BTreeMap<String, f64>,
}

impl SampleWeights {
    /// `1/N` for each of the `N` ids.
    pub fn uniform<S: AsRef<str>>(ids: &[S]) -> Self {
        let w = 1.0 / ids.len() as f64;
        Self {
            weights: ids.iter().map(|id| (id.as_ref().to_string(), w)).collect(),
        }
    }

    /// Validates non-negative weights summing to one within 1e-9.
    pub fn new(weights: BTreeMap<String, f64>) -> Result<Self, LearnerError> {
        if weights.is_empty() {
            return Err(LearnerError::InvalidWeights("no weights".into()));
        }
        if let Some((id, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(LearnerError::InvalidWeights(format!("{id:?} has weight {w}")));
        }
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > INTERNAL_TOLERANCE {
            return Err(LearnerError::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { weights })
    }

    /// Normalizes arbitrary non-negative scores.
    pub fn normalized(raw: BTreeMap<String, f64>) -> Result<Self, LearnerError> {
        let sum: f64 = raw.values().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(LearnerError::InvalidWeights(format!("cannot normalize sum {sum}")));
        }
        Self::new(raw.into_iter().map(|(k, v)| (k, v / sum)).collect())
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.weights.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.weights.iter()
    }

    pub fn sum(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// Featurized view of a dataset, indexed by position.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    ids: Vec<String>,
    features: Vec<FeatureVector>,
    labels: Vec<Label>,
    classes: usize,
    config: FeatureConfig,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    /// Featurizes every sample; parallel over samples, order preserved.
    pub fn build(d: &Dataset, config: &FeatureConfig) -> Result<Self, LearnerError> {
        config.validate()?;
        let features = d
            .samples()
            .par_iter()
            .map(|s| featurize_code(&s.code, config))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_parts(
            d.samples().iter().map(|s| s.id.clone()).collect(),
            features,
            d.samples().iter().map(|s| s.label).collect(),
            d.class_count(),
            config.clone(),
        ))
    }

    pub fn from_parts(
        ids: Vec<String>,
        features: Vec<FeatureVector>,
        labels: Vec<Label>,
        classes: usize,
        config: FeatureConfig,
    ) -> Self {
        assert_eq!(ids.len(), features.len());
        assert_eq!(ids.len(), labels.len());
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            ids,
            features,
            labels,
            classes,
            config,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn position(&self, id: &str) -> Result<usize, LearnerError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| LearnerError::UnknownSample(id.to_string()))
    }

    pub fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    pub fn features(&self, pos: usize) -> &FeatureVector {
        &self.features[pos]
    }

    pub fn label(&self, pos: usize) -> Label {
        self.labels[pos]
    }

    pub fn positions<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<usize>, LearnerError> {
        ids.iter().map(|id| self.position(id.as_ref())).collect()
    }
}

/// How sample weights reach the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Per-sample multipliers on the cross-entropy.
    #[default]
    LossWeighted,
    /// Draw N rows with probability proportional to weight, then train
    /// uniformly.
    Resampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub learning_rate: f64,
    pub schedule: StepSchedule,
    pub epochs: usize,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Scale every feature vector to unit L2 norm before the dot product.
    pub normalize: bool,
    pub weight_mode: WeightMode,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            schedule: StepSchedule::Linear,
            epochs: 20,
            l2: 1e-4,
            batch_size: 32,
            seed: 0,
            normalize: true,
            weight_mode: WeightMode::LossWeighted,
        }
    }
}

impl LinearConfig {
    fn validate(&self) -> Result<(), LearnerError> {
        if self.epochs == 0 {
            return Err(LearnerError::ZeroEpochs);
        }
        if self.batch_size == 0 {
            return Err(LearnerError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LearnerError::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(LearnerError::InvalidConfig("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Trained multinomial logistic regression over hashed features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub params: SoftmaxParams,
    pub config: LinearConfig,
}

impl LinearModel {
    pub fn dims(&self) -> usize {
        self.params.width()
    }

    pub fn classes(&self) -> usize {
        self.params.classes()
    }
}

/// Model input row for a feature vector.
pub fn feature_row(f: &FeatureVector, normalize: bool) -> SparseRow {
    let scale = if normalize && f.norm() > 0.0 {
        1.0 / f.norm()
    } else {
        1.0
    };
    f.entries().iter().map(|&(j, v)| (j, v * scale)).collect()
}

/// Fits the built-in learner on `ids` under sample weights `w`, which must
/// cover exactly those ids.
pub fn fit_builtin<S: AsRef<str>>(
    table: &FeatureTable,
    ids: &[S],
    w: &SampleWeights,
    cfg: &LinearConfig,
) -> Result<LinearModel, LearnerError> {
    cfg.validate()?;
    if ids.is_empty() {
        return Err(LearnerError::EmptyTrainingSet);
    }
    let unique: HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
    if unique.len() != ids.len() {
        return Err(LearnerError::WeightCoverageMismatch("training ids repeat".into()));
    }
    if w.len() != unique.len() || w.iter().any(|(id, _)| !unique.contains(id.as_str())) {
        return Err(LearnerError::WeightCoverageMismatch(format!(
            "{} weights for {} ids",
            w.len(),
            unique.len()
        )));
    }
    let positions = table.positions(ids)?;
    let weights: Vec<f64> = ids
        .iter()
        .map(|id| w.get(id.as_ref()).unwrap_or_default())
        .collect();
    fit_rows(table, &positions, &weights, cfg)
}

/// Fits on table rows `positions` (repeats allowed) with row weights summing
/// to one.
pub fn fit_rows(
    table: &FeatureTable,
    positions: &[usize],
    row_weights: &[f64],
    cfg: &LinearConfig,
) -> Result<LinearModel, LearnerError> {
    cfg.validate()?;
    if positions.is_empty() {
        return Err(LearnerError::EmptyTrainingSet);
    }
    let (positions, row_weights) = match cfg.weight_mode {
        WeightMode::LossWeighted => (positions.to_vec(), row_weights.to_vec()),
        WeightMode::Resampled => {
            let dist = WeightedIndex::new(row_weights)
                .map_err(|e| LearnerError::InvalidWeights(e.to_string()))?;
            let mut rng = stream_rng(cfg.seed, streams::RESAMPLE);
            let drawn: Vec<usize> = (0..positions.len())
                .map(|_| positions[dist.sample(&mut rng)])
                .collect();
            let n = drawn.len();
            (drawn, vec![1.0 / n as f64; n])
        }
    };
    let rows: Vec<SparseRow> = positions
        .iter()
        .map(|&p| feature_row(table.features(p), cfg.normalize))
        .collect();
    let classes = table.classes();
    let targets: Vec<Vec<f64>> = positions
        .iter()
        .map(|&p| ProbVector::one_hot(table.label(p), classes).into_vec())
        .collect();
    let descent = DescentConfig {
        learning_rate: cfg.learning_rate,
        schedule: cfg.schedule,
        epochs: cfg.epochs,
        l2: cfg.l2,
        batch_size: Some(cfg.batch_size),
        seed: derive_seed(cfg.seed, streams::LEARNER),
    };
    let out = linear::train(
        classes,
        table.config().dims,
        &rows,
        &targets,
        &row_weights,
        &descent,
        false,
    );
    Ok(LinearModel {
        params: out.params,
        config: cfg.clone(),
    })
}

/// `softmax(W f + b)`.
pub fn predict_builtin(m: &LinearModel, f: &FeatureVector) -> Result<ProbVector, LearnerError> {
    if f.dims() != m.dims() {
        return Err(LearnerError::DimensionMismatch {
            got: f.dims(),
            expected: m.dims(),
        });
    }
    let probs = m.params.probs(&feature_row(f, m.config.normalize));
    ProbVector::from_internal(probs).map_err(|e| LearnerError::MalformedProbVector {
        id: String::new(),
        reason: e.to_string(),
    })
}

/// Scores every id of a split.
pub fn predict_split<S: AsRef<str> + Sync>(
    m: &LinearModel,
    model_id: &str,
    table: &FeatureTable,
    ids: &[S],
    split: Split,
) -> Result<PredictionSet, LearnerError> {
    let scored = ids
        .par_iter()
        .map(|id| {
            let pos = table.position(id.as_ref())?;
            predict_builtin(m, table.features(pos))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut set = PredictionSet::new(model_id, split, m.classes());
    for (id, p) in ids.iter().zip(scored) {
        set.insert(id.as_ref(), p)
            .map_err(|e| LearnerError::DuplicateSample(e.to_string()))?;
    }
    Ok(set)
}

/// Kind-specific base-learner configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    BuiltinLinear {
        linear: LinearConfig,
        features: FeatureConfig,
    },
    /// Predictions come from files under `dir`.
    External { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseLearnerSpec {
    pub model_id: String,
    #[serde(flatten)]
    pub kind: LearnerKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightRow {
    id: String,
    weight: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredRow {
    id: String,
    probs: Vec<f64>,
}

pub fn round_dir(dir: &Path, round: usize) -> PathBuf {
    dir.join("boost").join(format!("round_{round}"))
}

pub fn round_weights_path(dir: &Path, round: usize) -> PathBuf {
    round_dir(dir, round).join("weights.jsonl")
}

pub fn round_preds_path(dir: &Path, round: usize, split: Split) -> PathBuf {
    round_dir(dir, round).join(format!("preds_{split}.jsonl"))
}

pub fn preds_path(dir: &Path, model_id: &str, split: Split) -> PathBuf {
    dir.join("preds").join(model_id).join(format!("{split}.jsonl"))
}

/// Writes `boost/round_<t>/weights.jsonl` (rows in id order). Round `t > 1`
/// may only be emitted after round `t - 1`.
pub fn emit_round_weights(dir: &Path, round: usize, w: &SampleWeights) -> Result<PathBuf, LearnerError> {
    if round == 0 {
        return Err(LearnerError::ProtocolOrder("rounds are numbered from 1".into()));
    }
    if round > 1 && !round_weights_path(dir, round - 1).exists() {
        return Err(LearnerError::ProtocolOrder(format!(
            "round {round} emitted before round {}",
            round - 1
        )));
    }
    let path = round_weights_path(dir, round);
    let rows = w.iter().map(|(id, &weight)| WeightRow {
        id: id.clone(),
        weight,
    });
    artifact::write_jsonl(&path, rows).map_err(io_err(&path))?;
    Ok(path)
}

/// Reads a round's weight file back.
pub fn read_round_weights(dir: &Path, round: usize) -> Result<SampleWeights, LearnerError> {
    let path = round_weights_path(dir, round);
    let mut weights = BTreeMap::new();
    for (line, text) in artifact::read_lines(&path).map_err(io_err(&path))? {
        let row: WeightRow = serde_json::from_str(&text).map_err(|e| LearnerError::MalformedRow {
            path: path.display().to_string(),
            line,
            reason: e.to_string(),
        })?;
        if weights.insert(row.id.clone(), row.weight).is_some() {
            return Err(LearnerError::DuplicateSample(row.id));
        }
    }
    SampleWeights::new(weights)
}

/// Writes a prediction set as JSONL rows in id order.
pub fn write_prediction_rows(path: &Path, set: &PredictionSet) -> Result<(), LearnerError> {
    let rows = set.iter().map(|(id, p)| PredRow {
        id: id.clone(),
        probs: p.as_slice().to_vec(),
    });
    artifact::write_jsonl(path, rows).map_err(io_err(path))
}

/// Writes `preds/<model_id>/<split>.jsonl`.
pub fn write_predictions(dir: &Path, set: &PredictionSet) -> Result<PathBuf, LearnerError> {
    let path = preds_path(dir, &set.model_id, set.split);
    write_prediction_rows(&path, set)?;
    Ok(path)
}

/// Reads prediction rows from `path` and checks they cover `expected` ids
/// exactly once.
pub fn read_prediction_rows<S: AsRef<str>>(
    path: &Path,
    model_id: &str,
    split: Split,
    expected: &[S],
) -> Result<PredictionSet, LearnerError> {
    let lines = artifact::read_lines(path).map_err(io_err(path))?;
    let wanted: HashSet<&str> = expected.iter().map(|s| s.as_ref()).collect();
    let mut set: Option<PredictionSet> = None;
    for (line, text) in lines {
        let row: PredRow = serde_json::from_str(&text).map_err(|e| LearnerError::MalformedRow {
            path: path.display().to_string(),
            line,
            reason: e.to_string(),
        })?;
        if !wanted.contains(row.id.as_str()) {
            return Err(LearnerError::UnknownSample(row.id));
        }
        let p = ProbVector::validate(&row.probs).map_err(|e: ProbError| {
            LearnerError::MalformedProbVector {
                id: row.id.clone(),
                reason: e.to_string(),
            }
        })?;
        let set = set.get_or_insert_with(|| PredictionSet::new(model_id, split, p.class_count()));
        if set.get(&row.id).is_some() {
            return Err(LearnerError::DuplicateSample(row.id));
        }
        set.insert(row.id.clone(), p)
            .map_err(|e| LearnerError::MalformedProbVector {
                id: row.id,
                reason: e.to_string(),
            })?;
    }
    let set = set.unwrap_or_else(|| PredictionSet::new(model_id, split, 0));
    for id in expected {
        if set.get(id.as_ref()).is_none() {
            return Err(LearnerError::MissingSample(id.as_ref().to_string()));
        }
    }
    Ok(set)
}

/// Reads `preds/<model_id>/<split>.jsonl`, validated against the split ids.
pub fn ingest_predictions<S: AsRef<str>>(
    dir: &Path,
    model_id: &str,
    split: Split,
    expected: &[S],
) -> Result<PredictionSet, LearnerError> {
    read_prediction_rows(&preds_path(dir, model_id, split), model_id, split, expected)
}
