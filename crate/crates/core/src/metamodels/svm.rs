use super::{check_training_set, MetaError};
use crate::prob::Label;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            l2: 1e-4,
        }
    }
}

/// One-vs-rest linear SVM. `weights` is class-major, `classes x width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub classes: usize,
    pub width: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub config: SvmConfig,
}

/// Mean hinge loss plus `l2/2 |w|^2` for one binary problem with targets in
/// {-1, +1}, and a subgradient. At the kink the zero branch is taken.
pub fn hinge_objective_and_subgradient(
    w: &[f64],
    b: f64,
    x: &[Vec<f64>],
    signs: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &s) in x.iter().zip(signs) {
        let margin = s * (dot(w, row) + b);
        if margin < 1.0 {
            loss += 1.0 - margin;
            for (g, v) in gw.iter_mut().zip(row) {
                *g -= s * v / n;
            }
            gb -= s / n;
        }
    }
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * l2 / 2.0;
    for (g, v) in gw.iter_mut().zip(w) {
        *g += l2 * v;
    }
    (loss / n + reg, gw, gb)
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Subgradient descent with step backtracking: a step that raises the
/// objective is halved until it does not, so the trace never increases.
pub(crate) fn fit_binary(
    x: &[Vec<f64>],
    signs: &[f64],
    width: usize,
    cfg: &SvmConfig,
    trace: Option<&mut Vec<f64>>,
) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; width];
    let mut b = 0.0;
    let mut local = Vec::new();
    let trace = trace.unwrap_or(&mut local);
    let (mut obj, mut gw, mut gb) = hinge_objective_and_subgradient(&w, b, x, signs, cfg.l2);
    trace.push(obj);
    for epoch in 0..cfg.epochs {
        let mut step = cfg.learning_rate / (1.0 + epoch as f64).sqrt();
        let mut accepted = false;
        for _ in 0..30 {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(v, g)| v - step * g).collect();
            let cand_b = b - step * gb;
            let (o, cgw, cgb) = hinge_objective_and_subgradient(&cand_w, cand_b, x, signs, cfg.l2);
            if o <= obj {
                w = cand_w;
                b = cand_b;
                obj = o;
                gw = cgw;
                gb = cgb;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        trace.push(obj);
        if !accepted {
            break;
        }
    }
    (w, b)
}

impl SvmModel {
    pub fn fit(x: &[Vec<f64>], y: &[Label], classes: usize, cfg: &SvmConfig) -> Result<Self, MetaError> {
        let width = check_training_set(x, y, classes)?;
        if cfg.epochs == 0 || !(cfg.learning_rate > 0.0) || !(cfg.l2 >= 0.0) {
            return Err(MetaError::InvalidConfig(format!("{cfg:?}")));
        }
        let mut weights = Vec::with_capacity(classes * width);
        let mut bias = Vec::with_capacity(classes);
        for k in 0..classes {
            let signs: Vec<f64> = y.iter().map(|l| if l.0 == k { 1.0 } else { -1.0 }).collect();
            let (w, b) = fit_binary(x, &signs, width, cfg, None);
            weights.extend(w);
            bias.push(b);
        }
        Ok(Self {
            classes,
            width,
            weights,
            bias,
            config: cfg.clone(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| dot(&self.weights[k * self.width..(k + 1) * self.width], x) + self.bias[k])
            .collect()
    }

    /// Unit-scale logistic squashing of each margin, renormalized.
    pub fn predict_raw(&self, x: &[f64]) -> Vec<f64> {
        let s: Vec<f64> = self.margins(x).into_iter().map(sigmoid).collect();
        let total: f64 = s.iter().sum();
        if total > 0.0 {
            s.into_iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / self.classes as f64; self.classes]
        }
    }
}
