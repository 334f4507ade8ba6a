use super::{check_training_set, MetaError};
use crate::prob::Label;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub classes: usize,
    pub width: usize,
    /// Effective k, clamped to the stored row count.
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl KnnModel {
    pub fn fit(x: &[Vec<f64>], y: &[Label], classes: usize, cfg: &KnnConfig) -> Result<Self, MetaError> {
        let width = check_training_set(x, y, classes)?;
        if cfg.k == 0 {
            return Err(MetaError::InvalidConfig("k must be at least 1".into()));
        }
        Ok(Self {
            classes,
            width,
            k: cfg.k.min(x.len()),
            rows: x.to_vec(),
            labels: y.to_vec(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Label fractions among the k nearest rows. Every row tied with the
    /// k-th distance is counted too, so storage order never matters.
    pub fn predict_raw(&self, x: &[f64]) -> Vec<f64> {
        let mut dist: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let cutoff = dist[self.k - 1].0;
        let mut counts = vec![0.0; self.classes];
        let mut n = 0.0;
        for &(d, i) in &dist {
            if d > cutoff {
                break;
            }
            counts[self.labels[i].0] += 1.0;
            n += 1.0;
        }
        counts.iter_mut().for_each(|c| *c /= n);
        counts
    }
}
