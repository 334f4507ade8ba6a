//! Confusion-based scores, support-weighted multi-class scores, average
//! ranks across experiment instances, divergent-sample analysis and
//! correct-set overlap regions.
//!
//! Any ratio with a zero denominator is reported as 0.

use crate::prob::{Label, PredictionSet};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{preds} predictions but {truth} labels")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("no samples")]
    Empty,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("overlap supports 1 to 6 sets, got {0}")]
    TooManySets(usize),
    #[error("prediction sets do not cover the same samples: {0}")]
    CoverageMismatch(String),
    #[error("score table is ragged: {0}")]
    Ragged(String),
}

pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub classes: usize,
    pub accuracy: f64,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassScores>,
    pub w_precision: f64,
    pub w_recall: f64,
    pub w_f1: f64,
    /// Positive-class (label 1) scores; present when there are two classes.
    pub binary: Option<BinaryCounts>,
}

impl MetricsReport {
    /// Headline precision: positive class for binary, weighted otherwise.
    pub fn precision(&self) -> f64 {
        self.binary.as_ref().map_or(self.w_precision, |b| b.precision)
    }

    pub fn recall(&self) -> f64 {
        self.binary.as_ref().map_or(self.w_recall, |b| b.recall)
    }

    pub fn f1(&self) -> f64 {
        self.binary.as_ref().map_or(self.w_f1, |b| b.f1)
    }
}

fn check(preds: &[Label], truth: &[Label], k: usize) -> Result<(), MetricsError> {
    if preds.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truth: truth.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(bad) = preds.iter().chain(truth).find(|l| l.0 >= k) {
        return Err(MetricsError::LabelOutOfRange { label: bad.0, classes: k });
    }
    Ok(())
}

/// Per-class one-vs-rest scores weighted by truth support.
pub fn weighted_metrics(preds: &[Label], truth: &[Label], k: usize) -> Result<MetricsReport, MetricsError> {
    check(preds, truth, k)?;
    let mut confusion = vec![vec![0usize; k]; k];
    for (p, t) in preds.iter().zip(truth) {
        confusion[t.0][p.0] += 1;
    }
    let n = preds.len();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassScores> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassScores {
                support,
                precision,
                recall,
                f1: f1_score(precision, recall),
            }
        })
        .collect();
    let total: usize = per_class.iter().map(|c| c.support).sum();
    let weigh = |f: fn(&ClassScores) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64
        }
    };
    let binary = (k == 2).then(|| {
        let tp = confusion[1][1];
        let tn = confusion[0][0];
        let fp = confusion[0][1];
        let fn_ = confusion[1][0];
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        BinaryCounts {
            tp,
            tn,
            fp,
            fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    });
    Ok(MetricsReport {
        samples: n,
        classes: k,
        accuracy: ratio(correct, n),
        w_precision: weigh(|c| c.precision),
        w_recall: weigh(|c| c.recall),
        w_f1: weigh(|c| c.f1),
        confusion,
        per_class,
        binary,
    })
}

/// Binary scores with label 1 as the positive (vulnerable) class.
pub fn binary_metrics(preds: &[Label], truth: &[Label]) -> Result<MetricsReport, MetricsError> {
    weighted_metrics(preds, truth, 2)
}

/// Scores a prediction set against ground truth, using each row's decision.
pub fn evaluate_set(set: &PredictionSet, truth: &BTreeMap<String, Label>) -> Result<MetricsReport, MetricsError> {
    let mut p = Vec::with_capacity(set.len());
    let mut t = Vec::with_capacity(set.len());
    for (id, row) in set.iter() {
        let label = truth
            .get(id)
            .ok_or_else(|| MetricsError::CoverageMismatch(format!("no label for {id:?}")))?;
        p.push(row.decide());
        t.push(*label);
    }
    weighted_metrics(&p, &t, set.classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// Tied entries share the mean of their positions.
    #[default]
    Average,
    /// Tied entries share the best of their positions (1224).
    Competition,
}

impl std::str::FromStr for TieRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(TieRule::Average),
            "competition" => Ok(TieRule::Competition),
            other => Err(format!("unknown tie rule {other:?} (average|competition)")),
        }
    }
}

/// Scores indexed `values[metric][instance][method]`; higher is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub instances: Vec<String>,
    pub metrics: Vec<String>,
    pub values: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub instances: Vec<String>,
    pub metrics: Vec<String>,
    pub tie_rule: TieRule,
    /// `ranks[metric][instance][method]`, 1 is best.
    pub ranks: Vec<Vec<Vec<f64>>>,
    /// `averages[metric][method]`.
    pub averages: Vec<Vec<f64>>,
}

/// Ranks of `scores` in descending order under `rule`.
pub fn rank_descending(scores: &[f64], rule: TieRule) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = match rule {
            TieRule::Average => (i + j) as f64 / 2.0 + 1.0,
            TieRule::Competition => i as f64 + 1.0,
        };
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn average_rank(table: &ScoreTable, rule: TieRule) -> Result<RankTable, MetricsError> {
    let m = table.methods.len();
    if table.values.len() != table.metrics.len() {
        return Err(MetricsError::Ragged(format!(
            "{} metric names, {} metric blocks",
            table.metrics.len(),
            table.values.len()
        )));
    }
    if table.instances.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut ranks = Vec::with_capacity(table.metrics.len());
    let mut averages = Vec::with_capacity(table.metrics.len());
    for block in &table.values {
        if block.len() != table.instances.len() || block.iter().any(|row| row.len() != m) {
            return Err(MetricsError::Ragged("instance or method count differs".into()));
        }
        let r: Vec<Vec<f64>> = block.iter().map(|row| rank_descending(row, rule)).collect();
        let avg = (0..m)
            .map(|j| r.iter().map(|row| row[j]).sum::<f64>() / r.len() as f64)
            .collect();
        ranks.push(r);
        averages.push(avg);
    }
    Ok(RankTable {
        methods: table.methods.clone(),
        instances: table.instances.clone(),
        metrics: table.metrics.clone(),
        tie_rule: rule,
        ranks,
        averages,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub total: usize,
    /// Ids on which member decisions are not all equal.
    pub divergent_ids: Vec<String>,
    /// Fraction of divergent ids each evaluated set gets right.
    pub correct_fraction: Vec<(String, f64)>,
}

/// Divergent ids across `members`, then each of `members` followed by
/// `methods` scored on those ids.
pub fn divergence(
    members: &[PredictionSet],
    methods: &[PredictionSet],
    truth: &BTreeMap<String, Label>,
) -> Result<DivergenceReport, MetricsError> {
    if members.len() < 2 {
        return Err(MetricsError::CoverageMismatch(format!(
            "need at least 2 member sets, got {}",
            members.len()
        )));
    }
    let ids: Vec<&String> = members[0].ids().collect();
    for s in members.iter().chain(methods) {
        if s.len() != ids.len() || ids.iter().any(|id| s.get(id).is_none()) {
            return Err(MetricsError::CoverageMismatch(format!("{} differs in coverage", s.model_id)));
        }
    }
    let divergent: Vec<String> = ids
        .iter()
        .filter(|id| {
            let first = members[0].get(id).unwrap().decide();
            members[1..].iter().any(|s| s.get(id).unwrap().decide() != first)
        })
        .map(|id| (*id).clone())
        .collect();
    let correct_fraction = members
        .iter()
        .chain(methods)
        .map(|s| {
            let hits = divergent
                .iter()
                .map(|id| {
                    truth
                        .get(id)
                        .map(|t| s.get(id).unwrap().decide() == *t)
                        .ok_or_else(|| MetricsError::CoverageMismatch(format!("no label for {id:?}")))
                })
                .collect::<Result<Vec<bool>, _>>()?;
            Ok((s.model_id.clone(), ratio(hits.iter().filter(|&&h| h).count(), divergent.len())))
        })
        .collect::<Result<_, MetricsError>>()?;
    Ok(DivergenceReport {
        total: ids.len(),
        divergent_ids: divergent,
        correct_fraction,
    })
}

pub const MAX_OVERLAP_SETS: usize = 6;

/// Count of elements per exact membership pattern. Bit `j` of a mask is set
/// when the element is in set `j`. Every non-empty mask is present.
pub fn overlap_regions<T: Ord>(sets: &[BTreeSet<T>]) -> Result<BTreeMap<u32, usize>, MetricsError> {
    if sets.is_empty() || sets.len() > MAX_OVERLAP_SETS {
        return Err(MetricsError::TooManySets(sets.len()));
    }
    let mut masks: BTreeMap<&T, u32> = BTreeMap::new();
    for (j, s) in sets.iter().enumerate() {
        for x in s {
            *masks.entry(x).or_default() |= 1 << j;
        }
    }
    let mut out: BTreeMap<u32, usize> = (1..(1u32 << sets.len())).map(|m| (m, 0)).collect();
    for m in masks.values() {
        *out.get_mut(m).expect("mask in range") += 1;
    }
    Ok(out)
}

/// Mask as a fixed-width bit string, set 0 rightmost.
pub fn mask_label(mask: u32, sets: usize) -> String {
    format!("{mask:0width$b}", width = sets)
}

/// Ids each set decides correctly.
pub fn correct_ids(set: &PredictionSet, truth: &BTreeMap<String, Label>) -> BTreeSet<String> {
    set.iter()
        .filter(|(id, p)| truth.get(*id) == Some(&p.decide()))
        .map(|(id, _)| id.clone())
        .collect()
}

pub mod csv_out {
    //! CSV renderings of reports.

    use super::*;

    fn render(header: &[&str], rows: Vec<Vec<String>>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(&r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }

    pub fn metrics(rows: &[(String, MetricsReport)]) -> String {
        render(
            &["method", "samples", "accuracy", "precision", "recall", "f1", "w_precision", "w_recall", "w_f1"],
            rows.iter()
                .map(|(name, r)| {
                    vec![
                        name.clone(),
                        r.samples.to_string(),
                        r.accuracy.to_string(),
                        r.precision().to_string(),
                        r.recall().to_string(),
                        r.f1().to_string(),
                        r.w_precision.to_string(),
                        r.w_recall.to_string(),
                        r.w_f1.to_string(),
                    ]
                })
                .collect(),
        )
    }

    pub fn ranks(t: &RankTable) -> String {
        let mut header = vec!["method"];
        header.extend(t.metrics.iter().map(String::as_str));
        render(
            &header,
            t.methods
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    let mut row = vec![m.clone()];
                    row.extend(t.averages.iter().map(|a| a[j].to_string()));
                    row
                })
                .collect(),
        )
    }

    pub fn overlap(regions: &BTreeMap<u32, usize>, sets: usize) -> String {
        render(
            &["bitmask", "count"],
            regions
                .iter()
                .map(|(m, c)| vec![mask_label(*m, sets), c.to_string()])
                .collect(),
        )
    }

    pub fn divergence(r: &DivergenceReport) -> String {
        let mut rows = vec![
            vec!["#total".to_string(), r.total.to_string()],
            vec!["#divergent".to_string(), r.divergent_ids.len().to_string()],
        ];
        rows.extend(r.correct_fraction.iter().map(|(m, f)| vec![m.clone(), f.to_string()]));
        render(&["method", "correct_fraction"], rows)
    }

    /// One row per sample: id, weight, label.
    pub fn boost_weights(ids: &[String], weights: &[f64], labels: &[Label]) -> String {
        render(
            &["id", "weight", "label"],
            ids.iter()
                .zip(weights)
                .zip(labels)
                .map(|((id, w), l)| vec![id.clone(), w.to_string(), l.0.to_string()])
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[usize]) -> Vec<Label> {
        v.iter().map(|&l| Label(l)).collect()
    }

    #[test]
    fn f1_examples() {
        assert!((f1_score(42.77, 29.82) - 35.14).abs() < 0.01);
        assert!((f1_score(37.84, 42.98) - 40.25).abs() < 0.01);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn no_positives_anywhere() {
        let r = binary_metrics(&labels(&[0, 0, 0]), &labels(&[0, 0, 0])).unwrap();
        let b = r.binary.unwrap();
        assert_eq!((b.precision, b.recall, b.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn counts() {
        let r = binary_metrics(&labels(&[1, 1, 0, 0, 1]), &labels(&[1, 0, 0, 1, 1])).unwrap();
        let b = r.binary.unwrap();
        assert_eq!((b.tp, b.tn, b.fp, b.fn_), (2, 1, 1, 1));
        assert_eq!(r.accuracy, 0.6);
        assert!((b.precision - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_examples() {
        let r = weighted_metrics(&labels(&[2, 2, 2]), &labels(&[2, 2, 2]), 4).unwrap();
        assert_eq!((r.w_precision, r.w_recall, r.w_f1), (1.0, 1.0, 1.0));
        // supports 3:1, class 0 perfect, class 1 never predicted
        let r = weighted_metrics(&labels(&[0, 0, 0, 2]), &labels(&[0, 0, 0, 1]), 3).unwrap();
        assert_eq!(r.per_class[0].f1, 1.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert_eq!(r.w_f1, 0.75);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            binary_metrics(&labels(&[0]), &labels(&[0, 1])),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(binary_metrics(&[], &[]), Err(MetricsError::Empty));
        assert!(matches!(
            binary_metrics(&labels(&[2]), &labels(&[0])),
            Err(MetricsError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_descending(&[3.0, 2.0, 1.0], TieRule::Average), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank_descending(&[5.0, 5.0, 1.0], TieRule::Average), vec![1.5, 1.5, 3.0]);
        assert_eq!(rank_descending(&[5.0, 5.0, 1.0], TieRule::Competition), vec![1.0, 1.0, 3.0]);
        assert_eq!(
            rank_descending(&[1.0, 4.0, 4.0, 4.0, 0.0], TieRule::Average),
            vec![4.0, 2.0, 2.0, 2.0, 5.0]
        );
    }

    #[test]
    fn average_over_instances() {
        let t = ScoreTable {
            methods: vec!["a".into(), "b".into()],
            instances: vec!["i1".into(), "i2".into()],
            metrics: vec!["acc".into()],
            values: vec![vec![vec![0.9, 0.8], vec![0.7, 0.7]]],
        };
        let r = average_rank(&t, TieRule::Average).unwrap();
        assert_eq!(r.averages, vec![vec![1.25, 1.75]]);
    }

    #[test]
    fn overlap_examples() {
        let a: BTreeSet<&str> = ["a"].into();
        let b: BTreeSet<&str> = ["b"].into();
        let r = overlap_regions(&[a, b]).unwrap();
        assert_eq!(r, [(1, 1), (2, 1), (3, 0)].into());
        let s: BTreeSet<u32> = (0..7).collect();
        let r = overlap_regions(&[s.clone(), s.clone(), s]).unwrap();
        assert_eq!(r[&7], 7);
        assert_eq!(r.values().sum::<usize>(), 7);
        let many: Vec<BTreeSet<u8>> = vec![BTreeSet::new(); 7];
        assert_eq!(overlap_regions(&many), Err(MetricsError::TooManySets(7)));
        assert_eq!(mask_label(2, 3), "010");
    }

    #[test]
    fn divergence_examples() {
        use crate::ingest::Split;
        use crate::prob::ProbVector;
        let mk = |name: &str, ls: &[usize]| {
            let mut s = PredictionSet::new(name, Split::Test, 2);
            for (i, &l) in ls.iter().enumerate() {
                s.insert(format!("s{i}"), ProbVector::one_hot(Label(l), 2)).unwrap();
            }
            s
        };
        let truth: BTreeMap<String, Label> = (0..4).map(|i| (format!("s{i}"), Label(1))).collect();
        let a = mk("a", &[1, 0, 1, 1]);
        let r = divergence(&[a.clone(), a.clone()], &[], &truth).unwrap();
        assert!(r.divergent_ids.is_empty());
        let b = mk("b", &[1, 0, 0, 1]);
        let r = divergence(&[a.clone(), a.clone(), b.clone()], &[], &truth).unwrap();
        assert_eq!(r.divergent_ids, vec!["s2".to_string()]);
        assert_eq!(r.correct_fraction[2], ("b".to_string(), 0.0));
        let rev = divergence(&[b, a.clone(), a], &[], &truth).unwrap();
        assert_eq!(rev.divergent_ids, r.divergent_ids);
    }

    #[test]
    fn csv_quotes_awkward_ids() {
        let text = csv_out::boost_weights(&["a,b".into()], &[0.5], &[Label(1)]);
        assert_eq!(text, "id,weight,label\n\"a,b\",0.5,1\n");
    }

    proptest! {
        #[test]
        fn binary_weighted_recall_is_accuracy(v in prop::collection::vec((0usize..2, 0usize..2), 1..60)) {
            let p: Vec<Label> = v.iter().map(|x| Label(x.0)).collect();
            let t: Vec<Label> = v.iter().map(|x| Label(x.1)).collect();
            let r = binary_metrics(&p, &t).unwrap();
            prop_assert!((r.w_recall - r.accuracy).abs() < 1e-12);
            let b = r.binary.unwrap();
            prop_assert_eq!(b.tp + b.tn + b.fp + b.fn_, v.len());
            prop_assert_eq!(r.accuracy, (b.tp + b.tn) as f64 / v.len() as f64);
            if b.precision + b.recall > 0.0 {
                prop_assert!((b.f1 - 2.0 * b.precision * b.recall / (b.precision + b.recall)).abs() < 1e-15);
            }
        }

        #[test]
        fn ranks_ignore_monotone_transforms(v in prop::collection::vec(0i32..6, 1..8)) {
            let a: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = v.iter().map(|&x| (x as f64).exp() * 3.0 - 7.0).collect();
            prop_assert_eq!(rank_descending(&a, TieRule::Average), rank_descending(&b, TieRule::Average));
            let total: f64 = rank_descending(&a, TieRule::Average).iter().sum();
            let n = a.len() as f64;
            prop_assert!((total - n * (n + 1.0) / 2.0).abs() < 1e-9);
        }

        #[test]
        fn uniform_supports_give_macro_average(reps in 1usize..5, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = 3;
            let t: Vec<Label> = (0..k * reps).map(|i| Label(i % k)).collect();
            let p: Vec<Label> = (0..k * reps).map(|_| Label(rng.gen_range(0..k))).collect();
            let r = weighted_metrics(&p, &t, k).unwrap();
            let macro_f1 = r.per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
            prop_assert!((r.w_f1 - macro_f1).abs() < 1e-12);
        }
    }
}
