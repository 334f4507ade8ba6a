use super::{aligned_rows, check_classes, EnsembleError};
use crate::ingest::Split;
use crate::learners::{
    emit_round_weights, fit_builtin, predict_split, read_prediction_rows, round_preds_path, FeatureTable,
    LinearConfig, LinearModel, SampleWeights,
};
use crate::prob::{Label, PredictionSet, ProbVector};
use crate::seed::derive_seed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostVariant {
    BinaryAdaboost,
    Samme,
}

impl BoostVariant {
    pub fn for_classes(k: usize) -> Self {
        if k == 2 {
            BoostVariant::BinaryAdaboost
        } else {
            BoostVariant::Samme
        }
    }

    /// Error at or above which a round carries no information.
    pub fn max_error(self, k: usize) -> f64 {
        match self {
            BoostVariant::BinaryAdaboost => 0.5,
            BoostVariant::Samme => 1.0 - 1.0 / k as f64,
        }
    }
}

/// How rounds are combined at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoostVote {
    /// `alpha`-weighted votes on each round's label.
    #[default]
    Labels,
    /// `alpha`-weighted sum of each round's probability vector.
    ScoreSum,
}

impl std::str::FromStr for BoostVote {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "labels" => Ok(BoostVote::Labels),
            "score_sum" => Ok(BoostVote::ScoreSum),
            other => Err(format!("unknown boost vote {other:?} (labels|score_sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    /// Round `round` had error at or above the variant's limit and was dropped.
    ErrorTooHigh { round: usize, epsilon: f64 },
    /// Round `round` made no weighted mistakes; it is kept and ends training.
    Perfect { round: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostRound {
    pub t: usize,
    pub model_id: String,
    pub epsilon: f64,
    pub alpha: f64,
    /// Normalizer of the weight update that followed this round.
    pub z: f64,
    pub model: Option<LinearModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostEnsemble {
    pub variant: BoostVariant,
    pub classes: usize,
    pub vote: BoostVote,
    pub rounds: Vec<BoostRound>,
    pub stop: StopReason,
}

/// Result of a boosting run: the ensemble and the weight vector each
/// attempted round was trained under, aligned with `ids`.
#[derive(Debug, Clone)]
pub struct BoostFit {
    pub ensemble: BoostEnsemble,
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    pub weights: Vec<Vec<f64>>,
}

pub fn alpha_for(variant: BoostVariant, epsilon: f64, k: usize) -> f64 {
    match variant {
        BoostVariant::BinaryAdaboost => 0.5 * ((1.0 - epsilon) / epsilon).ln(),
        BoostVariant::Samme => ((1.0 - epsilon) / epsilon).ln() + ((k - 1) as f64).ln(),
    }
}

/// One reweighting step. Binary: `w * exp(-alpha * y f)` with `y f = +1` on
/// a hit and `-1` on a miss. SAMME: `w * exp(alpha * miss)`. Returns the
/// normalized weights and the normalizer `Z`.
pub fn update_weights(variant: BoostVariant, w: &[f64], miss: &[bool], alpha: f64) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = w
        .iter()
        .zip(miss)
        .map(|(&wi, &m)| match variant {
            BoostVariant::BinaryAdaboost => wi * if m { alpha.exp() } else { (-alpha).exp() },
            BoostVariant::Samme => {
                if m {
                    wi * alpha.exp()
                } else {
                    wi
                }
            }
        })
        .collect();
    let z: f64 = raw.iter().sum();
    (raw.into_iter().map(|v| v / z).collect(), z)
}

/// Supplies the weak learner for each round.
pub trait RoundLearner {
    /// Trains round `t` (1-based) under `w` and returns its predictions on
    /// the training ids, plus the model when it is built in.
    fn fit_round(
        &mut self,
        t: usize,
        w: &SampleWeights,
    ) -> Result<(PredictionSet, Option<LinearModel>), EnsembleError>;
}

pub struct BuiltinRounds<'a> {
    pub table: &'a FeatureTable,
    pub ids: &'a [String],
    pub config: LinearConfig,
    pub base_id: String,
}

impl RoundLearner for BuiltinRounds<'_> {
    fn fit_round(
        &mut self,
        t: usize,
        w: &SampleWeights,
    ) -> Result<(PredictionSet, Option<LinearModel>), EnsembleError> {
        let cfg = LinearConfig {
            seed: derive_seed(self.config.seed, t as u64),
            ..self.config.clone()
        };
        let model = fit_builtin(self.table, self.ids, w, &cfg)?;
        let preds = predict_split(&model, &round_id(&self.base_id, t), self.table, self.ids, Split::Train)?;
        Ok((preds, Some(model)))
    }
}

/// External trainer: round `t` weights are written to
/// `boost/round_<t>/weights.jsonl`; its train predictions are expected in
/// `boost/round_<t>/preds_train.jsonl`.
pub struct ExternalRounds<'a> {
    pub dir: PathBuf,
    pub ids: &'a [String],
    pub base_id: String,
}

impl RoundLearner for ExternalRounds<'_> {
    fn fit_round(
        &mut self,
        t: usize,
        w: &SampleWeights,
    ) -> Result<(PredictionSet, Option<LinearModel>), EnsembleError> {
        emit_round_weights(&self.dir, t, w)?;
        let path = round_preds_path(&self.dir, t, Split::Train);
        if !path.exists() {
            return Err(EnsembleError::RoundPending {
                round: t,
                path: path.display().to_string(),
            });
        }
        let set = read_prediction_rows(&path, &round_id(&self.base_id, t), Split::Train, self.ids)?;
        Ok((set, None))
    }
}

pub fn round_id(base_id: &str, t: usize) -> String {
    format!("{base_id}.r{t}")
}

/// AdaBoost over `ids` for at most `rounds` rounds, starting from uniform
/// weights. A round whose error reaches the variant's limit ends training
/// and is dropped; a round with zero error ends training and is kept with
/// `alpha = 1 + sum of earlier alphas`, so its vote decides alone.
pub fn adaboost_fit<L: RoundLearner>(
    learner: &mut L,
    ids: &[String],
    labels: &[Label],
    classes: usize,
    rounds: usize,
    variant: BoostVariant,
    vote: BoostVote,
) -> Result<BoostFit, EnsembleError> {
    if rounds == 0 {
        return Err(EnsembleError::InvalidConfig("at least one round is needed".into()));
    }
    if ids.is_empty() || ids.len() != labels.len() {
        return Err(EnsembleError::InvalidConfig(format!(
            "{} ids and {} labels",
            ids.len(),
            labels.len()
        )));
    }
    if variant == BoostVariant::BinaryAdaboost && classes != 2 {
        return Err(EnsembleError::InvalidConfig(format!(
            "binary AdaBoost needs 2 classes, got {classes}; use SAMME"
        )));
    }
    let n = ids.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut history = Vec::new();
    let mut kept: Vec<BoostRound> = Vec::new();
    let mut stop = StopReason::Completed;
    for t in 1..=rounds {
        history.push(w.clone());
        let weights = SampleWeights::new(ids.iter().cloned().zip(w.iter().copied()).collect::<BTreeMap<_, _>>())?;
        let (preds, model) = learner.fit_round(t, &weights)?;
        if preds.classes() != classes {
            return Err(EnsembleError::MemberKMismatch {
                expected: classes,
                got: preds.classes(),
            });
        }
        let miss: Vec<bool> = ids
            .iter()
            .zip(labels)
            .map(|(id, l)| {
                preds
                    .get(id)
                    .map(|p| p.decide() != *l)
                    .ok_or_else(|| EnsembleError::CoverageMismatch(format!("round {t} lacks {id:?}")))
            })
            .collect::<Result<_, _>>()?;
        let epsilon: f64 = w.iter().zip(&miss).filter(|(_, &m)| m).map(|(wi, _)| wi).sum();
        let model_id = preds.model_id.clone();
        if !miss.iter().any(|&m| m) {
            let alpha = 1.0 + kept.iter().map(|r| r.alpha).sum::<f64>();
            kept.push(BoostRound {
                t,
                model_id,
                epsilon: 0.0,
                alpha,
                z: 1.0,
                model,
            });
            stop = StopReason::Perfect { round: t };
            break;
        }
        if epsilon >= variant.max_error(classes) {
            if kept.is_empty() {
                return Err(EnsembleError::NoRoundsRetained { epsilon });
            }
            stop = StopReason::ErrorTooHigh { round: t, epsilon };
            break;
        }
        let alpha = alpha_for(variant, epsilon, classes);
        let (next, z) = update_weights(variant, &w, &miss, alpha);
        w = next;
        kept.push(BoostRound {
            t,
            model_id,
            epsilon,
            alpha,
            z,
            model,
        });
    }
    Ok(BoostFit {
        ensemble: BoostEnsemble {
            variant,
            classes,
            vote,
            rounds: kept,
            stop,
        },
        ids: ids.to_vec(),
        labels: labels.to_vec(),
        weights: history,
    })
}

impl BoostEnsemble {
    pub fn alpha_total(&self) -> f64 {
        self.rounds.iter().map(|r| r.alpha).sum()
    }

    /// Weighted vote over per-round outputs (one per retained round, in
    /// round order), normalized by the alpha total.
    pub fn combine(&self, rows: &[&ProbVector]) -> Result<ProbVector, EnsembleError> {
        let k = check_classes(rows)?;
        if rows.len() != self.rounds.len() {
            return Err(EnsembleError::LayoutMismatch {
                expected: self.rounds.len(),
                got: rows.len(),
            });
        }
        let total = self.alpha_total();
        let mut score = vec![0.0; k];
        for (r, p) in self.rounds.iter().zip(rows) {
            match self.vote {
                BoostVote::Labels => score[p.decide().0] += r.alpha,
                BoostVote::ScoreSum => {
                    for (s, v) in score.iter_mut().zip(p.as_slice()) {
                        *s += r.alpha * v;
                    }
                }
            }
        }
        Ok(ProbVector::from_internal(score.into_iter().map(|s| s / total).collect())?)
    }

    /// Per-round predictions on `ids` from the stored built-in models.
    pub fn round_sets(
        &self,
        table: &FeatureTable,
        ids: &[String],
        split: Split,
    ) -> Result<Vec<PredictionSet>, EnsembleError> {
        self.rounds
            .iter()
            .map(|r| {
                let model = r.model.as_ref().ok_or_else(|| {
                    EnsembleError::InvalidConfig(format!("round {} has no built-in model", r.t))
                })?;
                Ok(predict_split(model, &r.model_id, table, ids, split)?)
            })
            .collect()
    }

    pub fn combine_sets(&self, sets: &[PredictionSet], model_id: &str) -> Result<PredictionSet, EnsembleError> {
        let rows = aligned_rows(sets)?;
        let mut out = PredictionSet::new(model_id, sets[0].split, self.classes);
        for (id, row) in rows {
            out.insert(id, self.combine(&row)?)
                .map_err(|e| EnsembleError::CoverageMismatch(e.to_string()))?;
        }
        Ok(out)
    }
}
