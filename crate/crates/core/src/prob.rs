//! Class labels and probability vectors.
//!
//! Every prediction that crosses a module boundary is a [`ProbVector`]. Two
//! tolerances apply: values read from disk must sum to one within
//! [`INGEST_TOLERANCE`], values produced in-process within
//! [`INTERNAL_TOLERANCE`].

use crate::ingest::Split;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Sum tolerance for probability vectors read from external files.
pub const INGEST_TOLERANCE: f64 = 1e-6;
/// Sum tolerance for probability vectors computed in-process.
pub const INTERNAL_TOLERANCE: f64 = 1e-9;
/// Sums closer to one than this are left untouched.
const RENORMALIZE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("probability vector is empty")]
    InvalidProbVector,
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entry {index} is not finite")]
    NonFiniteEntry { index: usize },
    #[error("entries sum to {sum}, outside tolerance {tolerance}")]
    SumOutOfTolerance { sum: f64, tolerance: f64 },
}

/// Class id. For binary tasks 0 is non-vulnerable and 1 vulnerable; for
/// multi-class tasks 1.. are CWE classes.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct Label(pub usize);

impl Label {
    pub const NON_VULNERABLE: Label = Label(0);
    pub const VULNERABLE: Label = Label(1);

    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A categorical distribution over `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    /// Validates externally supplied probabilities and renormalizes them to
    /// sum to one.
    pub fn validate(raw: &[f64]) -> Result<Self, ProbError> {
        Self::checked(raw, INGEST_TOLERANCE)
    }

    /// Validates probabilities computed in-process. Entries are kept
    /// bit-for-bit when the sum is one up to floating-point rounding.
    pub fn from_internal(raw: Vec<f64>) -> Result<Self, ProbError> {
        Self::checked(&raw, INTERNAL_TOLERANCE)
    }

    fn checked(raw: &[f64], tolerance: f64) -> Result<Self, ProbError> {
        if raw.is_empty() {
            return Err(ProbError::InvalidProbVector);
        }
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(ProbError::NonFiniteEntry { index });
            }
            if value < 0.0 {
                return Err(ProbError::NegativeEntry { index, value });
            }
        }
        let sum: f64 = raw.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(ProbError::SumOutOfTolerance { sum, tolerance });
        }
        // renormalizing a vector already at one up to rounding would only
        // shuffle low bits and break idempotence
        let probs = if (sum - 1.0).abs() <= RENORMALIZE_SLACK {
            raw.to_vec()
        } else {
            raw.iter().map(|p| (p / sum).min(1.0)).collect()
        };
        Ok(Self { probs })
    }

    /// One-hot vector for `label` over `classes` classes.
    pub fn one_hot(label: Label, classes: usize) -> Self {
        assert!(label.0 < classes, "label {label} out of range for K={classes}");
        let mut probs = vec![0.0; classes];
        probs[label.0] = 1.0;
        Self { probs }
    }

    pub fn uniform(classes: usize) -> Self {
        assert!(classes > 0);
        Self {
            probs: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn class_count(&self) -> usize {
        self.probs.len()
    }

    pub fn get(&self, label: Label) -> f64 {
        self.probs[label.0]
    }

    /// Argmax with ties going to the lowest class index.
    pub fn argmax(&self) -> Label {
        argmax_index(&self.probs).map(Label).expect("non-empty")
    }

    /// Predicted label. Binary vectors use the `p(vulnerable) >= 0.5` rule;
    /// otherwise the argmax.
    pub fn decide(&self) -> Label {
        if self.probs.len() == 2 {
            if self.probs[1] >= 0.5 {
                Label(1)
            } else {
                Label(0)
            }
        } else {
            self.argmax()
        }
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        ProbVector::validate(&raw).map_err(serde::de::Error::custom)
    }
}

/// Index of the largest entry, lowest index on ties. `None` for empty input.
pub fn argmax_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Argmax over raw probabilities; ties resolve to the lowest class index.
pub fn argmax_label(p: &[f64]) -> Result<Label, ProbError> {
    argmax_index(p).map(Label).ok_or(ProbError::InvalidProbVector)
}

/// Ingest-tolerance validation of raw probabilities.
pub fn validate_prob_vector(raw: &[f64]) -> Result<ProbVector, ProbError> {
    ProbVector::validate(raw)
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// One model's probability outputs over one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_id: String,
    pub split: Split,
    classes: usize,
    rows: BTreeMap<String, ProbVector>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictionSetError {
    #[error("row {id:?} has {got} classes, expected {expected}")]
    ClassCountMismatch { id: String, got: usize, expected: usize },
    #[error("duplicate row {0:?}")]
    DuplicateId(String),
}

impl PredictionSet {
    pub fn new(model_id: impl Into<String>, split: Split, classes: usize) -> Self {
        Self {
            model_id: model_id.into(),
            split,
            classes,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, p: ProbVector) -> Result<(), PredictionSetError> {
        let id = id.into();
        if p.class_count() != self.classes {
            return Err(PredictionSetError::ClassCountMismatch {
                id,
                got: p.class_count(),
                expected: self.classes,
            });
        }
        if self.rows.contains_key(&id) {
            return Err(PredictionSetError::DuplicateId(id));
        }
        self.rows.insert(id, p);
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ProbVector> {
        self.rows.get(id)
    }

    /// Rows in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ProbVector)> {
        self.rows.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.rows.keys()
    }

    /// Predicted labels keyed by id.
    pub fn decisions(&self) -> BTreeMap<&str, Label> {
        self.rows.iter().map(|(id, p)| (id.as_str(), p.decide())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_label(&[0.2, 0.8]).unwrap(), Label(1));
        assert_eq!(argmax_label(&[0.5, 0.5]).unwrap(), Label(0));
        assert_eq!(argmax_label(&[0.1, 0.1, 0.8]).unwrap(), Label(2));
        assert_eq!(argmax_label(&[]), Err(ProbError::InvalidProbVector));
    }

    #[test]
    fn validation_examples() {
        assert!(validate_prob_vector(&[0.4, 0.6]).is_ok());
        assert!(matches!(
            validate_prob_vector(&[0.5, 0.6]),
            Err(ProbError::SumOutOfTolerance { .. })
        ));
        let vertex = validate_prob_vector(&[1.0, 0.0]).unwrap();
        assert_eq!(vertex.as_slice(), &[1.0, 0.0]);
        assert!(matches!(
            validate_prob_vector(&[-0.1, 1.1]),
            Err(ProbError::NegativeEntry { index: 0, .. })
        ));
        assert!(matches!(
            validate_prob_vector(&[f64::NAN, 1.0]),
            Err(ProbError::NonFiniteEntry { index: 0 })
        ));
    }

    #[test]
    fn rounded_input_is_renormalized() {
        let p = validate_prob_vector(&[0.3333333, 0.3333333, 0.3333333]).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < INTERNAL_TOLERANCE);
    }

    #[test]
    fn binary_decision_threshold_is_inclusive() {
        let p = ProbVector::validate(&[0.5, 0.5]).unwrap();
        assert_eq!(p.decide(), Label(1));
        assert_eq!(p.argmax(), Label(0));
        let q = ProbVector::validate(&[0.51, 0.49]).unwrap();
        assert_eq!(q.decide(), Label(0));
    }

    fn raw_vector() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, 1..8)
    }

    proptest! {
        #[test]
        fn argmax_is_permutation_covariant(raw in raw_vector(), rot in 0usize..8) {
            let n = raw.len();
            let rot = rot % n;
            let mut rotated = raw.clone();
            rotated.rotate_left(rot);
            let a = argmax_index(&raw).unwrap();
            let b = argmax_index(&rotated).unwrap();
            // values at the returned positions agree; indices agree unless tied
            prop_assert_eq!(raw[a], rotated[b]);
            if raw.iter().filter(|&&v| v == raw[a]).count() == 1 {
                prop_assert_eq!((b + rot) % n, a);
            }
        }

        #[test]
        fn argmax_is_scale_invariant(raw in raw_vector(), c in 0.01f64..100.0) {
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
            let s_total: f64 = scaled.iter().sum();
            let q: Vec<f64> = scaled.iter().map(|v| v / s_total).collect();
            let a = argmax_index(&p).unwrap();
            let b = argmax_index(&q).unwrap();
            prop_assert!(a == b || (p[a] - p[b]).abs() < 1e-12);
        }

        #[test]
        fn validation_is_idempotent(raw in raw_vector()) {
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let once = validate_prob_vector(&p).unwrap();
            let twice = validate_prob_vector(once.as_slice()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
