//! Bagging, AdaBoost/SAMME, stacking and gated stacking (DGS).
//!
//! Every strategy combines per-sample [`ProbVector`]s, so built-in and
//! external base models go through the same code once their outputs are
//! [`PredictionSet`]s.

mod bagging;
mod boosting;
mod dgs;
mod file;
mod stacking;

pub use bagging::{
    bagging_fit, bagging_predict, combine_sets, hard_vote, member_id, soft_vote, BaggingEnsemble, BaggingMember,
    VoteMode,
};
pub use boosting::{
    adaboost_fit, alpha_for, round_id, update_weights, BoostEnsemble, BoostFit, BoostRound, BoostVariant,
    BoostVote, BuiltinRounds, ExternalRounds, RoundLearner, StopReason,
};
pub use dgs::{dgs_fit, gate_input, gate_targets, route, DgsConfig, GateModel, Routing};
pub use file::{Ensemble, EnsembleFile, ENSEMBLE_SCHEMA_VERSION};
pub use stacking::{stack_row, stacking_fit, StackingModel};

use crate::ingest::IngestError;
use crate::learners::LearnerError;
use crate::metamodels::MetaError;
use crate::prob::{PredictionSet, ProbError, ProbVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("member has {got} classes, expected {expected}")]
    MemberKMismatch { expected: usize, got: usize },
    #[error("ensemble needs at least {needed} members, got {got}")]
    TooFewMembers { needed: usize, got: usize },
    #[error("first boosting round is already degenerate (epsilon = {epsilon})")]
    NoRoundsRetained { epsilon: f64 },
    #[error("prediction sets do not cover the same samples: {0}")]
    CoverageMismatch(String),
    #[error("input has width {got}, layout expects {expected}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("round {round} predictions are not available yet: {path}")]
    RoundPending { round: usize, path: String },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Weighted sum `sum_j weights[j] * rows[j]`, accumulated in member order.
/// Soft voting and soft routing both go through here so a uniform gate
/// reproduces soft voting bit for bit.
pub fn mixture(rows: &[&ProbVector], weights: &[f64]) -> Vec<f64> {
    let k = rows[0].class_count();
    let mut out = vec![0.0; k];
    for (row, &w) in rows.iter().zip(weights) {
        for (o, p) in out.iter_mut().zip(row.as_slice()) {
            *o += w * p;
        }
    }
    out
}

pub(crate) fn check_classes(rows: &[&ProbVector]) -> Result<usize, EnsembleError> {
    let Some(first) = rows.first() else {
        return Err(EnsembleError::TooFewMembers { needed: 1, got: 0 });
    };
    let k = first.class_count();
    for r in rows {
        if r.class_count() != k {
            return Err(EnsembleError::MemberKMismatch {
                expected: k,
                got: r.class_count(),
            });
        }
    }
    Ok(k)
}

/// Rows of `sets` aligned by id (id order). All sets must cover the same ids
/// with the same class count.
pub fn aligned_rows(sets: &[PredictionSet]) -> Result<Vec<(&str, Vec<&ProbVector>)>, EnsembleError> {
    let Some(first) = sets.first() else {
        return Err(EnsembleError::TooFewMembers { needed: 1, got: 0 });
    };
    for s in sets {
        if s.classes() != first.classes() {
            return Err(EnsembleError::MemberKMismatch {
                expected: first.classes(),
                got: s.classes(),
            });
        }
        if s.len() != first.len() {
            return Err(EnsembleError::CoverageMismatch(format!(
                "{} has {} rows, {} has {}",
                first.model_id,
                first.len(),
                s.model_id,
                s.len()
            )));
        }
    }
    first
        .iter()
        .map(|(id, _)| {
            let row = sets
                .iter()
                .map(|s| {
                    s.get(id).ok_or_else(|| {
                        EnsembleError::CoverageMismatch(format!("{id:?} missing from {}", s.model_id))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((id.as_str(), row))
        })
        .collect()
}
