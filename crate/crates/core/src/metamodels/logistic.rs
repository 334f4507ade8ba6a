use super::{check_training_set, MetaError};
use crate::linear::{self, dense_to_sparse, DescentConfig, SoftmaxParams, SparseRow, StepSchedule};
use crate::prob::{Label, ProbVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub schedule: StepSchedule,
    pub epochs: usize,
    pub l2: f64,
    /// Minibatch size; `None` is full-batch descent.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            schedule: StepSchedule::Constant,
            epochs: 200,
            l2: 1e-4,
            batch_size: None,
        }
    }
}

/// Softmax regression trained by gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub params: SoftmaxParams,
    pub config: LogisticConfig,
}

impl LogisticModel {
    pub fn fit(
        x: &[Vec<f64>],
        y: &[Label],
        classes: usize,
        cfg: &LogisticConfig,
        seed: u64,
    ) -> Result<Self, MetaError> {
        let width = check_training_set(x, y, classes)?;
        let rows: Vec<SparseRow> = x.iter().map(|r| dense_to_sparse(r)).collect();
        let targets: Vec<Vec<f64>> = y
            .iter()
            .map(|&l| ProbVector::one_hot(l, classes).into_vec())
            .collect();
        Self::fit_soft(&rows, &targets, width, classes, cfg, seed)
    }

    /// Fits on sparse rows against target distributions (cross-entropy with
    /// soft targets). Used directly by the gating model.
    pub fn fit_soft(
        rows: &[SparseRow],
        targets: &[Vec<f64>],
        width: usize,
        classes: usize,
        cfg: &LogisticConfig,
        seed: u64,
    ) -> Result<Self, MetaError> {
        if rows.is_empty() {
            return Err(MetaError::EmptyTrainingSet);
        }
        if cfg.epochs == 0 || !(cfg.learning_rate > 0.0) || !(cfg.l2 >= 0.0) || cfg.batch_size == Some(0) {
            return Err(MetaError::InvalidConfig(format!("{cfg:?}")));
        }
        if let Some(bad) = rows.iter().flatten().find(|(j, _)| *j as usize >= width) {
            return Err(MetaError::WidthMismatch {
                expected: width,
                got: bad.0 as usize + 1,
            });
        }
        let n = rows.len();
        let weights = vec![1.0 / n as f64; n];
        let descent = DescentConfig {
            learning_rate: cfg.learning_rate,
            schedule: cfg.schedule,
            epochs: cfg.epochs,
            l2: cfg.l2,
            batch_size: cfg.batch_size,
            seed,
        };
        let out = linear::train(classes, width, rows, targets, &weights, &descent, false);
        Ok(Self {
            params: out.params,
            config: cfg.clone(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.params.width()
    }

    pub fn classes(&self) -> usize {
        self.params.classes()
    }

    pub fn predict_dense(&self, x: &[f64]) -> Vec<f64> {
        self.params.probs(&dense_to_sparse(x))
    }

    pub fn predict_sparse(&self, row: &[(u32, f64)]) -> Vec<f64> {
        self.params.probs(row)
    }
}
