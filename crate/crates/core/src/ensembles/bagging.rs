use super::{aligned_rows, check_classes, mixture, EnsembleError};
use crate::ingest::{BootstrapPlan, Split};
use crate::learners::{fit_rows, predict_split, FeatureTable, LinearConfig, LinearModel};
use crate::prob::{PredictionSet, ProbVector};
use crate::seed::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    Hard,
    #[default]
    Soft,
}

impl std::str::FromStr for VoteMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hard" => Ok(VoteMode::Hard),
            "soft" => Ok(VoteMode::Soft),
            other => Err(format!("unknown vote mode {other:?} (hard|soft)")),
        }
    }
}

/// Majority over member labels, as a one-hot vector. A tie on votes goes to
/// the tied class with the larger summed probability, then to the lowest
/// class index.
pub fn hard_vote(rows: &[&ProbVector]) -> Result<ProbVector, EnsembleError> {
    let k = check_classes(rows)?;
    let mut votes = vec![0usize; k];
    let mut mass = vec![0.0; k];
    for r in rows {
        votes[r.decide().0] += 1;
        for (m, p) in mass.iter_mut().zip(r.as_slice()) {
            *m += p;
        }
    }
    let mut best = 0;
    for c in 1..k {
        if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
            best = c;
        }
    }
    Ok(ProbVector::one_hot(crate::prob::Label(best), k))
}

/// Entrywise mean of member vectors.
pub fn soft_vote(rows: &[&ProbVector]) -> Result<ProbVector, EnsembleError> {
    check_classes(rows)?;
    let w = vec![1.0 / rows.len() as f64; rows.len()];
    Ok(ProbVector::from_internal(mixture(rows, &w))?)
}

pub fn bagging_predict(mode: VoteMode, rows: &[&ProbVector]) -> Result<ProbVector, EnsembleError> {
    match mode {
        VoteMode::Hard => hard_vote(rows),
        VoteMode::Soft => soft_vote(rows),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggingMember {
    pub model_id: String,
    /// Absent for external members, whose outputs arrive as files.
    pub model: Option<LinearModel>,
    pub draw_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggingEnsemble {
    pub mode: VoteMode,
    pub base_id: String,
    pub bootstrap_seed: u64,
    pub members: Vec<BaggingMember>,
}

/// Trains one built-in member per bootstrap draw, uniform weight per draw
/// row. Member `j` uses learner seed `derive_seed(cfg.seed, j)`.
pub fn bagging_fit(
    table: &FeatureTable,
    plan: &BootstrapPlan,
    cfg: &LinearConfig,
    mode: VoteMode,
    base_id: &str,
) -> Result<BaggingEnsemble, EnsembleError> {
    if plan.draws.is_empty() {
        return Err(EnsembleError::TooFewMembers { needed: 1, got: 0 });
    }
    let members = plan
        .draws
        .par_iter()
        .enumerate()
        .map(|(j, draw)| {
            let positions = table.positions(draw)?;
            let w = vec![1.0 / positions.len() as f64; positions.len()];
            let member_cfg = LinearConfig {
                seed: derive_seed(cfg.seed, j as u64),
                ..cfg.clone()
            };
            let model = fit_rows(table, &positions, &w, &member_cfg)?;
            Ok(BaggingMember {
                model_id: member_id(base_id, j),
                model: Some(model),
                draw_size: draw.len(),
            })
        })
        .collect::<Result<Vec<_>, EnsembleError>>()?;
    Ok(BaggingEnsemble {
        mode,
        base_id: base_id.to_string(),
        bootstrap_seed: plan.seed,
        members,
    })
}

pub fn member_id(base_id: &str, j: usize) -> String {
    format!("{base_id}.m{j}")
}

impl BaggingEnsemble {
    /// Ensemble over externally produced member outputs.
    pub fn external(mode: VoteMode, base_id: &str, member_ids: &[String], bootstrap_seed: u64) -> Self {
        Self {
            mode,
            base_id: base_id.to_string(),
            bootstrap_seed,
            members: member_ids
                .iter()
                .map(|id| BaggingMember {
                    model_id: id.clone(),
                    model: None,
                    draw_size: 0,
                })
                .collect(),
        }
    }

    /// Scores `ids` with every built-in member.
    pub fn member_sets(
        &self,
        table: &FeatureTable,
        ids: &[String],
        split: Split,
    ) -> Result<Vec<PredictionSet>, EnsembleError> {
        self.members
            .iter()
            .map(|m| {
                let model = m.model.as_ref().ok_or_else(|| {
                    EnsembleError::InvalidConfig(format!("member {} has no built-in model", m.model_id))
                })?;
                Ok(predict_split(model, &m.model_id, table, ids, split)?)
            })
            .collect()
    }

    /// Votes over aligned member sets.
    pub fn combine(&self, sets: &[PredictionSet], model_id: &str) -> Result<PredictionSet, EnsembleError> {
        combine_sets(self.mode, sets, model_id)
    }
}

pub fn combine_sets(mode: VoteMode, sets: &[PredictionSet], model_id: &str) -> Result<PredictionSet, EnsembleError> {
    let rows = aligned_rows(sets)?;
    let mut out = PredictionSet::new(model_id, sets[0].split, sets[0].classes());
    for (id, row) in rows {
        let p = bagging_predict(mode, &row)?;
        out.insert(id, p)
            .map_err(|e| EnsembleError::CoverageMismatch(e.to_string()))?;
    }
    Ok(out)
}
