use super::{aligned_rows, check_classes, mixture, EnsembleError};
use crate::codefeat::FeatureVector;
use crate::learners::{feature_row, FeatureTable};
use crate::linear::{SparseRow, StepSchedule};
use crate::metamodels::{LogisticConfig, LogisticModel};
use crate::prob::{argmax_index, Label, PredictionSet, ProbVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Routing {
    /// Output the chosen expert's vector unchanged.
    #[default]
    Hard,
    /// Gate-weighted mixture of expert vectors.
    Soft,
}

impl std::str::FromStr for Routing {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hard" => Ok(Routing::Hard),
            "soft" => Ok(Routing::Soft),
            other => Err(format!("unknown routing {other:?} (hard|soft)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgsConfig {
    #[serde(default)]
    pub routing: Routing,
    #[serde(default = "default_gate")]
    pub gate: LogisticConfig,
}

fn default_gate() -> LogisticConfig {
    LogisticConfig {
        learning_rate: 2.0,
        schedule: StepSchedule::Linear,
        epochs: 30,
        l2: 1e-6,
        batch_size: Some(16),
    }
}

impl Default for DgsConfig {
    fn default() -> Self {
        Self {
            routing: Routing::Hard,
            gate: default_gate(),
        }
    }
}

/// Softmax gate over `[unit-norm code features | base vectors]`, one output
/// per expert. Feature columns come first; base vectors start at column
/// `dims`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub base_ids: Vec<String>,
    pub classes: usize,
    pub dims: usize,
    pub routing: Routing,
    pub gate: LogisticModel,
}

/// Uniform over the experts whose label is right; uniform over all experts
/// when none is.
pub fn gate_targets(rows: &[&ProbVector], truth: Label) -> Vec<f64> {
    let right: Vec<bool> = rows.iter().map(|p| p.decide() == truth).collect();
    let n = right.iter().filter(|&&r| r).count();
    if n == 0 {
        return vec![1.0 / rows.len() as f64; rows.len()];
    }
    right.iter().map(|&r| if r { 1.0 / n as f64 } else { 0.0 }).collect()
}

pub fn gate_input(f: &FeatureVector, rows: &[&ProbVector]) -> SparseRow {
    let dims = f.dims() as u32;
    let mut out = feature_row(f, true);
    let mut col = dims;
    for p in rows {
        for &v in p.as_slice() {
            if v != 0.0 {
                out.push((col, v));
            }
            col += 1;
        }
    }
    out
}

/// Combines expert rows under gate scores. Hard ties go to the lowest
/// expert index.
pub fn route(routing: Routing, rows: &[&ProbVector], gate: &[f64]) -> Result<ProbVector, EnsembleError> {
    check_classes(rows)?;
    if gate.len() != rows.len() {
        return Err(EnsembleError::LayoutMismatch {
            expected: rows.len(),
            got: gate.len(),
        });
    }
    match routing {
        Routing::Hard => {
            let j = argmax_index(gate).expect("non-empty gate");
            Ok(rows[j].clone())
        }
        Routing::Soft => Ok(ProbVector::from_internal(mixture(rows, gate))?),
    }
}

/// Trains the gate on base predictions over one split with frozen experts.
pub fn dgs_fit(
    base: &[PredictionSet],
    truth: &BTreeMap<String, Label>,
    table: &FeatureTable,
    cfg: &DgsConfig,
    seed: u64,
) -> Result<GateModel, EnsembleError> {
    if base.len() < 2 {
        return Err(EnsembleError::TooFewMembers {
            needed: 2,
            got: base.len(),
        });
    }
    let rows = aligned_rows(base)?;
    let classes = base[0].classes();
    let dims = table.config().dims;
    let prepared = rows
        .par_iter()
        .map(|(id, row)| {
            let label = truth
                .get(*id)
                .ok_or_else(|| EnsembleError::CoverageMismatch(format!("no label for {id:?}")))?;
            let pos = table.position(id)?;
            Ok((gate_input(table.features(pos), row), gate_targets(row, *label)))
        })
        .collect::<Result<Vec<_>, EnsembleError>>()?;
    let (x, targets): (Vec<SparseRow>, Vec<Vec<f64>>) = prepared.into_iter().unzip();
    let width = dims + base.len() * classes;
    let gate = LogisticModel::fit_soft(&x, &targets, width, base.len(), &cfg.gate, seed)?;
    Ok(GateModel {
        base_ids: base.iter().map(|s| s.model_id.clone()).collect(),
        classes,
        dims,
        routing: cfg.routing,
        gate,
    })
}

impl GateModel {
    fn check(&self, f: &FeatureVector, rows: &[&ProbVector]) -> Result<(), EnsembleError> {
        let k = check_classes(rows)?;
        if f.dims() != self.dims {
            return Err(EnsembleError::LayoutMismatch {
                expected: self.dims,
                got: f.dims(),
            });
        }
        if rows.len() != self.base_ids.len() || k != self.classes {
            return Err(EnsembleError::LayoutMismatch {
                expected: self.base_ids.len() * self.classes,
                got: rows.len() * k,
            });
        }
        Ok(())
    }

    /// Gate distribution over experts.
    pub fn scores(&self, f: &FeatureVector, rows: &[&ProbVector]) -> Result<Vec<f64>, EnsembleError> {
        self.check(f, rows)?;
        Ok(self.gate.predict_sparse(&gate_input(f, rows)))
    }

    pub fn predict(&self, f: &FeatureVector, rows: &[&ProbVector]) -> Result<ProbVector, EnsembleError> {
        let g = self.scores(f, rows)?;
        route(self.routing, rows, &g)
    }

    /// Routes every aligned sample; returns the combined set and the chosen
    /// (argmax) expert per id.
    pub fn predict_sets(
        &self,
        base: &[PredictionSet],
        table: &FeatureTable,
        model_id: &str,
    ) -> Result<(PredictionSet, BTreeMap<String, usize>), EnsembleError> {
        let rows = aligned_rows(base)?;
        let scored = rows
            .par_iter()
            .map(|(id, row)| {
                let pos = table.position(id)?;
                let g = self.scores(table.features(pos), row)?;
                let p = route(self.routing, row, &g)?;
                Ok((p, argmax_index(&g).expect("non-empty gate")))
            })
            .collect::<Result<Vec<_>, EnsembleError>>()?;
        let mut out = PredictionSet::new(model_id, base[0].split, self.classes);
        let mut chosen = BTreeMap::new();
        for ((id, _), (p, j)) in rows.iter().zip(scored) {
            out.insert(*id, p)
                .map_err(|e| EnsembleError::CoverageMismatch(e.to_string()))?;
            chosen.insert(id.to_string(), j);
        }
        Ok((out, chosen))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::soft_vote;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::validate(v).unwrap()
    }

    #[test]
    fn targets_follow_correct_set() {
        let right = pv(&[0.1, 0.9]);
        let wrong = pv(&[0.8, 0.2]);
        let rows = [&wrong, &wrong, &right, &wrong, &right];
        assert_eq!(gate_targets(&rows, Label(1)), vec![0.0, 0.0, 0.5, 0.0, 0.5]);
        let rows = [&wrong; 5];
        assert_eq!(gate_targets(&rows, Label(1)), vec![0.2; 5]);
    }

    #[test]
    fn hard_routing_returns_expert_verbatim() {
        let a = pv(&[0.3, 0.7]);
        let b = pv(&[0.6, 0.4]);
        let c = pv(&[0.5, 0.5]);
        assert_eq!(route(Routing::Hard, &[&a, &b, &c], &[0.1, 0.8, 0.1]).unwrap(), b);
        assert_eq!(route(Routing::Hard, &[&a, &b, &c], &[0.4, 0.4, 0.2]).unwrap(), a);
    }

    #[test]
    fn soft_routing_vertices_and_center() {
        let a = pv(&[0.3, 0.7]);
        let b = pv(&[0.6, 0.4]);
        let c = pv(&[0.15, 0.85]);
        let rows = [&a, &b, &c];
        assert_eq!(route(Routing::Soft, &rows, &[0.0, 1.0, 0.0]).unwrap(), b);
        let uniform = vec![1.0 / 3.0; 3];
        let soft = route(Routing::Soft, &rows, &uniform).unwrap();
        let bag = soft_vote(&rows).unwrap();
        let bits = |p: &ProbVector| p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&soft), bits(&bag));
    }

    #[test]
    fn gate_input_layout() {
        let f = FeatureVector::from_counts(8, [(1u32, 3.0), (5u32, 4.0)].into_iter().collect());
        let a = pv(&[0.25, 0.75]);
        let b = pv(&[1.0, 0.0]);
        let row = gate_input(&f, &[&a, &b]);
        let want = [(1, 0.6), (5, 0.8), (8, 0.25), (9, 0.75), (10, 1.0)];
        assert_eq!(row.len(), want.len());
        for (got, want) in row.iter().zip(want) {
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-15);
        }
    }
}
