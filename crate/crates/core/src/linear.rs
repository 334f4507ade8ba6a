//! Softmax regression over sparse rows with soft targets and per-row
//! weights. Shared by the built-in base learner, the logistic-regression
//! meta-model and the gated-stacking gate.
//!
//! Objective: `sum_i w_i * CE(t_i, softmax(W x_i + b)) + l2/2 * |W|^2`, with
//! row weights summing to one. The bias is not regularized.

use crate::prob::softmax;
use crate::seed::stream_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Sparse row: `(column, value)` pairs with distinct columns.
pub type SparseRow = Vec<(u32, f64)>;

pub fn dense_to_sparse(row: &[f64]) -> SparseRow {
    row.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| (j as u32, *v))
        .collect()
}

/// `K x width` weight matrix (class-major) plus `K` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxParams {
    classes: usize,
    width: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl SoftmaxParams {
    pub fn zeros(classes: usize, width: usize) -> Self {
        Self {
            classes,
            width,
            weights: vec![0.0; classes * width],
            bias: vec![0.0; classes],
        }
    }

    pub fn from_parts(classes: usize, width: usize, weights: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weights.len(), classes * width);
        assert_eq!(bias.len(), classes);
        Self {
            classes,
            width,
            weights,
            bias,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn weight(&self, class: usize, col: usize) -> f64 {
        self.weights[class * self.width + col]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn logits(&self, row: &[(u32, f64)]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (k, zk) in z.iter_mut().enumerate() {
            let w = &self.weights[k * self.width..(k + 1) * self.width];
            for &(j, x) in row {
                *zk += w[j as usize] * x;
            }
        }
        z
    }

    pub fn probs(&self, row: &[(u32, f64)]) -> Vec<f64> {
        softmax(&self.logits(row))
    }
}

#[derive(Serialize, Deserialize)]
struct SparseParams {
    classes: usize,
    width: usize,
    bias: Vec<f64>,
    /// Columns with at least one non-zero weight: `[column, [w_0 .. w_K-1]]`.
    columns: Vec<(u32, Vec<f64>)>,
}

impl Serialize for SoftmaxParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let columns = (0..self.width)
            .filter_map(|j| {
                let col: Vec<f64> = (0..self.classes).map(|k| self.weight(k, j)).collect();
                col.iter().any(|v| *v != 0.0).then_some((j as u32, col))
            })
            .collect();
        SparseParams {
            classes: self.classes,
            width: self.width,
            bias: self.bias.clone(),
            columns,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SoftmaxParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let sp = SparseParams::deserialize(deserializer)?;
        if sp.bias.len() != sp.classes {
            return Err(D::Error::custom("bias length differs from class count"));
        }
        let mut p = SoftmaxParams::zeros(sp.classes, sp.width);
        p.bias = sp.bias;
        for (j, col) in sp.columns {
            if j as usize >= sp.width || col.len() != sp.classes {
                return Err(D::Error::custom("weight column out of range"));
            }
            for (k, v) in col.into_iter().enumerate() {
                p.weights[k * sp.width + j as usize] = v;
            }
        }
        Ok(p)
    }
}

/// Gradient-descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub learning_rate: f64,
    pub schedule: StepSchedule,
    pub epochs: usize,
    pub l2: f64,
    /// `None` means full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

/// Step size over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// Epoch `e` of `E` uses `learning_rate * (E - e) / E`.
    Linear,
}

impl StepSchedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            StepSchedule::Constant => base,
            StepSchedule::Linear => base * (epochs - epoch) as f64 / epochs as f64,
        }
    }
}

/// Weighted data term of the gradient for the rows in `batch`, accumulated
/// into dense buffers. Returns the weighted cross-entropy of those rows.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_data_gradient(
    params: &SoftmaxParams,
    rows: &[SparseRow],
    targets: &[Vec<f64>],
    row_weights: &[f64],
    batch: &[usize],
    scale: f64,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> f64 {
    let width = params.width;
    let mut loss = 0.0;
    for &i in batch {
        let p = params.probs(&rows[i]);
        let w = row_weights[i] * scale;
        for k in 0..params.classes {
            let diff = w * (p[k] - targets[i][k]);
            if targets[i][k] > 0.0 {
                loss -= w * targets[i][k] * p[k].max(f64::MIN_POSITIVE).ln();
            }
            if diff != 0.0 {
                grad_b[k] += diff;
                let g = &mut grad_w[k * width..(k + 1) * width];
                for &(j, x) in &rows[i] {
                    g[j as usize] += diff * x;
                }
            }
        }
    }
    loss
}

/// Full objective and its dense gradient `(J, dJ/dW, dJ/db)`.
pub fn objective_and_gradient(
    params: &SoftmaxParams,
    rows: &[SparseRow],
    targets: &[Vec<f64>],
    row_weights: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut grad_w = vec![0.0; params.weights.len()];
    let mut grad_b = vec![0.0; params.classes];
    let all: Vec<usize> = (0..rows.len()).collect();
    let mut loss = accumulate_data_gradient(
        params, rows, targets, row_weights, &all, 1.0, &mut grad_w, &mut grad_b,
    );
    loss += 0.5 * l2 * params.weights.iter().map(|w| w * w).sum::<f64>();
    for (g, w) in grad_w.iter_mut().zip(&params.weights) {
        *g += l2 * w;
    }
    (loss, grad_w, grad_b)
}

pub fn objective(
    params: &SoftmaxParams,
    rows: &[SparseRow],
    targets: &[Vec<f64>],
    row_weights: &[f64],
    l2: f64,
) -> f64 {
    let mut loss = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let p = params.probs(row);
        for (k, &t) in targets[i].iter().enumerate() {
            if t > 0.0 {
                loss -= row_weights[i] * t * p[k].max(f64::MIN_POSITIVE).ln();
            }
        }
    }
    loss + 0.5 * l2 * params.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Trained parameters and the objective after each epoch (when tracked).
pub struct TrainOutcome {
    pub params: SoftmaxParams,
    pub loss_history: Vec<f64>,
}

/// Mini-batch gradient descent from zero weights.
///
/// Weight decay is applied through a global scale factor so each step only
/// touches the columns present in the batch.
pub fn train(
    classes: usize,
    width: usize,
    rows: &[SparseRow],
    targets: &[Vec<f64>],
    row_weights: &[f64],
    cfg: &DescentConfig,
    track_loss: bool,
) -> TrainOutcome {
    assert_eq!(rows.len(), targets.len());
    assert_eq!(rows.len(), row_weights.len());
    let n = rows.len();
    let mut params = SoftmaxParams::zeros(classes, width);
    // true weights = scale * params.weights
    let mut scale = 1.0f64;
    let batch_size = cfg.batch_size.unwrap_or(n).clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(cfg.seed, 0);
    let mut loss_history = Vec::new();
    let mut grad_b = vec![0.0; classes];

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        let decay = 1.0 - lr * cfg.l2;
        if batch_size < n {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(batch_size) {
            let batch_scale = n as f64 / batch.len() as f64;
            let mut coefs: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let p = effective_probs(&params, scale, &rows[i]);
                let w = row_weights[i] * batch_scale;
                let c: Vec<f64> = (0..classes).map(|k| w * (p[k] - targets[i][k])).collect();
                for k in 0..classes {
                    grad_b[k] += c[k];
                }
                coefs.push(c);
            }
            scale *= decay;
            let step = lr / scale;
            for (bi, &i) in batch.iter().enumerate() {
                for k in 0..classes {
                    let c = coefs[bi][k];
                    if c == 0.0 {
                        continue;
                    }
                    let w = &mut params.weights[k * width..(k + 1) * width];
                    for &(j, x) in &rows[i] {
                        w[j as usize] -= step * c * x;
                    }
                }
            }
            for k in 0..classes {
                params.bias[k] -= lr * grad_b[k];
            }
            if scale < 1e-6 {
                params.weights.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        if track_loss {
            let snapshot = materialize(&params, scale);
            loss_history.push(objective(&snapshot, rows, targets, row_weights, cfg.l2));
        }
    }
    TrainOutcome {
        params: materialize(&params, scale),
        loss_history,
    }
}

fn effective_probs(params: &SoftmaxParams, scale: f64, row: &[(u32, f64)]) -> Vec<f64> {
    let mut z = params.bias.clone();
    for (k, zk) in z.iter_mut().enumerate() {
        let w = &params.weights[k * params.width..(k + 1) * params.width];
        let mut dot = 0.0;
        for &(j, x) in row {
            dot += w[j as usize] * x;
        }
        *zk += scale * dot;
    }
    softmax(&z)
}

fn materialize(params: &SoftmaxParams, scale: f64) -> SoftmaxParams {
    let mut p = params.clone();
    if scale != 1.0 {
        p.weights.iter_mut().for_each(|w| *w *= scale);
    }
    p
}
