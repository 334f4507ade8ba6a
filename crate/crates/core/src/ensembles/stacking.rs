use super::{aligned_rows, check_classes, EnsembleError};
use crate::metamodels::{meta_fit, MetaConfig, MetaKind, MetaModel};
use crate::prob::{Label, PredictionSet, ProbVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingModel {
    /// Base model ids in input-layout order.
    pub base_ids: Vec<String>,
    pub classes: usize,
    pub meta: MetaModel,
}

/// Meta-model input: the base vectors concatenated in member order.
pub fn stack_row(rows: &[&ProbVector]) -> Vec<f64> {
    rows.iter().flat_map(|p| p.as_slice().iter().copied()).collect()
}

/// Trains the meta-model on base predictions over one split (validation in
/// the standard workflow), one row per sample in id order.
pub fn stacking_fit(
    base: &[PredictionSet],
    truth: &BTreeMap<String, Label>,
    kind: MetaKind,
    cfg: &MetaConfig,
    seed: u64,
) -> Result<StackingModel, EnsembleError> {
    if base.len() < 2 {
        return Err(EnsembleError::TooFewMembers {
            needed: 2,
            got: base.len(),
        });
    }
    let rows = aligned_rows(base)?;
    let classes = base[0].classes();
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (id, row) in &rows {
        let label = truth
            .get(*id)
            .ok_or_else(|| EnsembleError::CoverageMismatch(format!("no label for {id:?}")))?;
        x.push(stack_row(row));
        y.push(*label);
    }
    let meta = meta_fit(kind, &x, &y, classes, cfg, seed)?;
    Ok(StackingModel {
        base_ids: base.iter().map(|s| s.model_id.clone()).collect(),
        classes,
        meta,
    })
}

impl StackingModel {
    pub fn predict(&self, rows: &[&ProbVector]) -> Result<ProbVector, EnsembleError> {
        let k = check_classes(rows)?;
        let got = rows.len() * k;
        let expected = self.base_ids.len() * self.classes;
        if got != expected || k != self.classes {
            return Err(EnsembleError::LayoutMismatch { expected, got });
        }
        Ok(self.meta.predict(&stack_row(rows))?)
    }

    /// Scores aligned base sets. Sets must be in `base_ids` order.
    pub fn predict_sets(&self, base: &[PredictionSet], model_id: &str) -> Result<PredictionSet, EnsembleError> {
        let names: Vec<&str> = base.iter().map(|s| s.model_id.as_str()).collect();
        if names != self.base_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(EnsembleError::InvalidConfig(format!(
                "base sets {names:?} do not match layout {:?}",
                self.base_ids
            )));
        }
        let rows = aligned_rows(base)?;
        let mut out = PredictionSet::new(model_id, base[0].split, self.classes);
        for (id, row) in rows {
            out.insert(id, self.predict(&row)?)
                .map_err(|e| EnsembleError::CoverageMismatch(e.to_string()))?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Split;
    use crate::metamodels::KnnConfig;
    use rand::{Rng, SeedableRng};

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::validate(v).unwrap()
    }

    /// Two experts over `n` samples. A is confidently right on even ids and
    /// B on odd ids; each is unsure when wrong.
    fn complementary(n: usize) -> (Vec<PredictionSet>, BTreeMap<String, Label>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut a = PredictionSet::new("a", Split::Val, 2);
        let mut b = PredictionSet::new("b", Split::Val, 2);
        let mut truth = BTreeMap::new();
        for i in 0..n {
            let id = format!("s{i:04}");
            let y = rng.gen_range(0..2);
            let sure = 0.9 + rng.gen_range(-0.05..0.05);
            let unsure = 0.6 + rng.gen_range(-0.05..0.05);
            let vote = |right: bool, conf: f64| {
                let label = if right { y } else { 1 - y };
                let mut v = [1.0 - conf, 1.0 - conf];
                v[label] = conf;
                pv(&v)
            };
            let a_right = i % 2 == 0;
            a.insert(id.clone(), vote(a_right, if a_right { sure } else { unsure })).unwrap();
            b.insert(id.clone(), vote(!a_right, if a_right { unsure } else { sure })).unwrap();
            truth.insert(id, Label(y));
        }
        (vec![a, b], truth)
    }

    #[test]
    fn layout_is_concatenation() {
        let a = pv(&[0.1, 0.9]);
        let b = pv(&[0.7, 0.3]);
        assert_eq!(stack_row(&[&a, &b]), vec![0.1, 0.9, 0.7, 0.3]);
    }

    #[test]
    fn width_is_members_times_classes() {
        let sets: Vec<PredictionSet> = (0..5)
            .map(|j| {
                let mut s = PredictionSet::new(format!("m{j}"), Split::Val, 2);
                for i in 0..6 {
                    s.insert(format!("s{i}"), pv(&[0.5, 0.5])).unwrap();
                }
                s
            })
            .collect();
        let truth = (0..6).map(|i| (format!("s{i}"), Label(i % 2))).collect();
        let m = stacking_fit(&sets, &truth, MetaKind::Lr, &MetaConfig::default(), 0).unwrap();
        assert_eq!(m.meta.input_width(), 10);
        let row: Vec<&ProbVector> = (0..5).map(|j| sets[j].get("s0").unwrap()).collect();
        let p = m.predict(&row).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(m.predict(&row[..4]), Err(EnsembleError::LayoutMismatch { .. })));
    }

    #[test]
    fn complementary_experts_are_recovered_by_lr() {
        let (sets, truth) = complementary(400);
        let m = stacking_fit(&sets, &truth, MetaKind::Lr, &MetaConfig::default(), 0).unwrap();
        let out = m.predict_sets(&sets, "stack").unwrap();
        let hits = out.iter().filter(|(id, p)| p.decide() == truth[*id]).count();
        assert_eq!(hits, 400);
    }

    #[test]
    fn knn_k1_returns_training_label() {
        let (sets, truth) = complementary(50);
        let cfg = MetaConfig {
            knn: KnnConfig { k: 1 },
            ..MetaConfig::default()
        };
        let m = stacking_fit(&sets, &truth, MetaKind::Knn, &cfg, 0).unwrap();
        for (id, label) in &truth {
            let row = [sets[0].get(id).unwrap(), sets[1].get(id).unwrap()];
            assert_eq!(m.predict(&row).unwrap().get(*label), 1.0);
        }
    }

    #[test]
    fn missing_id_is_a_coverage_error() {
        let (mut sets, truth) = complementary(10);
        sets[1] = {
            let mut s = PredictionSet::new("b", Split::Val, 2);
            for (id, p) in sets[1].iter().skip(1) {
                s.insert(id.clone(), p.clone()).unwrap();
            }
            s
        };
        assert!(matches!(
            stacking_fit(&sets, &truth, MetaKind::Lr, &MetaConfig::default(), 0),
            Err(EnsembleError::CoverageMismatch(_))
        ));
    }

    #[test]
    fn identity_meta_copies_first_expert() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut a = PredictionSet::new("a", Split::Val, 2);
        let mut b = PredictionSet::new("b", Split::Val, 2);
        let mut truth = BTreeMap::new();
        for i in 0..300 {
            let id = format!("s{i:03}");
            let pa: f64 = rng.gen_range(0.0..1.0);
            let pb: f64 = rng.gen_range(0.0..1.0);
            a.insert(id.clone(), pv(&[1.0 - pa, pa])).unwrap();
            b.insert(id.clone(), pv(&[1.0 - pb, pb])).unwrap();
            truth.insert(id, Label(usize::from(pa >= 0.5)));
        }
        let sets = vec![a, b];
        let m = stacking_fit(&sets, &truth, MetaKind::Lr, &MetaConfig::default(), 0).unwrap();
        let mut agree = 0;
        for _ in 0..200 {
            let pa: f64 = rng.gen_range(0.0..1.0);
            if (pa - 0.5).abs() < 0.05 {
                agree += 1;
                continue;
            }
            let pb: f64 = rng.gen_range(0.0..1.0);
            let ra = pv(&[1.0 - pa, pa]);
            let rb = pv(&[1.0 - pb, pb]);
            if m.predict(&[&ra, &rb]).unwrap().argmax() == ra.argmax() {
                agree += 1;
            }
        }
        assert_eq!(agree, 200);
    }
}
