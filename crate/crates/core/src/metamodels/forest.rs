use super::{check_training_set, MetaError};
use crate::prob::Label;
use crate::seed::{derive_seed, stream_rng, streams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    /// `None` grows until leaves are pure or rows are indistinguishable.
    pub max_depth: Option<usize>,
    /// Draw each tree's rows with replacement. Off means every tree sees
    /// the full training set and differs only through feature sampling.
    #[serde(default = "yes")]
    pub bootstrap: bool,
}

fn yes() -> bool {
    true
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: Some(16),
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Class frequencies of the training rows reaching this leaf.
        dist: Vec<f64>,
        rows: usize,
    },
}

/// Nodes in a flat arena; index 0 is the root. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub classes: usize,
    pub width: usize,
    pub trees: Vec<DecisionTree>,
    pub config: ForestConfig,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Label],
    classes: usize,
    max_features: usize,
    max_depth: Option<usize>,
    nodes: Vec<TreeNode>,
}

struct Cut {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &r in rows {
            c[self.y[r].0] += 1;
        }
        c
    }

    /// Best threshold on one feature, or `None` if it is constant on `rows`.
    fn best_cut(&self, rows: &[usize], feature: usize) -> Option<Cut> {
        let mut order: Vec<usize> = rows.to_vec();
        order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
        let n = order.len();
        let mut left = vec![0usize; self.classes];
        let mut right = self.counts(rows);
        let mut best: Option<Cut> = None;
        for i in 0..n - 1 {
            let c = self.y[order[i]].0;
            left[c] += 1;
            right[c] -= 1;
            let lo = self.x[order[i]][feature];
            let hi = self.x[order[i + 1]][feature];
            if lo == hi {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.as_ref().map_or(true, |b| impurity < b.impurity) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Cut {
                    feature,
                    threshold,
                    impurity,
                });
            }
        }
        best
    }

    fn choose(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<Cut> {
        let width = self.x[0].len();
        let mut features: Vec<usize> = (0..width).collect();
        features.shuffle(rng);
        let (sampled, rest) = features.split_at(self.max_features.min(width));
        let pick = |set: &[usize]| {
            let mut best: Option<Cut> = None;
            for &f in set {
                if let Some(c) = self.best_cut(rows, f) {
                    let better = match &best {
                        None => true,
                        Some(b) => c.impurity < b.impurity || (c.impurity == b.impurity && c.feature < b.feature),
                    };
                    if better {
                        best = Some(c);
                    }
                }
            }
            best
        };
        pick(sampled).or_else(|| pick(rest))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(&rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let capped = self.max_depth.is_some_and(|d| depth >= d);
        let cut = if pure || capped || rows.len() < 2 {
            None
        } else {
            self.choose(&rows, rng)
        };
        let id = self.nodes.len();
        match cut {
            None => {
                let total = rows.len() as f64;
                self.nodes.push(TreeNode::Leaf {
                    dist: counts.iter().map(|&c| c as f64 / total).collect(),
                    rows: rows.len(),
                });
            }
            Some(cut) => {
                self.nodes.push(TreeNode::Leaf {
                    dist: Vec::new(),
                    rows: 0,
                });
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| self.x[i][cut.feature] <= cut.threshold);
                let left = self.grow(l, depth + 1, rng);
                let right = self.grow(r, depth + 1, rng);
                self.nodes[id] = TreeNode::Split {
                    feature: cut.feature,
                    threshold: cut.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

impl DecisionTree {
    pub fn leaf_for(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { .. } => return at,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_for(x)] {
            TreeNode::Leaf { dist, .. } => dist,
            TreeNode::Split { .. } => unreachable!(),
        }
    }
}

fn fit_tree(x: &[Vec<f64>], y: &[Label], classes: usize, cfg: &ForestConfig, mut rng: ChaCha8Rng) -> DecisionTree {
    let n = x.len();
    let rows: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let width = x[0].len();
    let max_features = ((width as f64).sqrt().round() as usize).max(1);
    let mut b = Builder {
        x,
        y,
        classes,
        max_features,
        max_depth: cfg.max_depth,
        nodes: Vec::new(),
    };
    b.grow(rows, 0, &mut rng);
    DecisionTree { nodes: b.nodes }
}

impl ForestModel {
    /// Trees are grown in parallel; tree `i` draws from its own stream so
    /// the forest does not depend on the worker count.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[Label],
        classes: usize,
        cfg: &ForestConfig,
        seed: u64,
    ) -> Result<Self, MetaError> {
        let width = check_training_set(x, y, classes)?;
        if cfg.trees == 0 || cfg.max_depth == Some(0) {
            return Err(MetaError::InvalidConfig(format!("{cfg:?}")));
        }
        let master = derive_seed(seed, streams::FOREST);
        let trees = (0..cfg.trees)
            .into_par_iter()
            .map(|i| fit_tree(x, y, classes, cfg, stream_rng(master, i as u64)))
            .collect();
        Ok(Self {
            classes,
            width,
            trees,
            config: cfg.clone(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Mean of per-tree leaf class frequencies.
    pub fn predict_raw(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.classes];
        for t in &self.trees {
            for (o, p) in out.iter_mut().zip(t.predict(x)) {
                *o += p;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn unique_rows(seed: u64, n: usize, width: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n)
            .map(|_| (0..width).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let y = (0..n).map(|_| Label(rng.gen_range(0..2))).collect();
        (x, y)
    }

    #[test]
    fn single_unbounded_tree_shatters_unique_rows() {
        let (x, y) = unique_rows(9, 20, 4);
        let cfg = ForestConfig {
            trees: 1,
            max_depth: None,
            bootstrap: false,
        };
        let m = ForestModel::fit(&x, &y, 2, &cfg, 0).unwrap();
        for (row, l) in x.iter().zip(&y) {
            let p = m.predict_raw(row);
            assert_eq!(p[l.0], 1.0);
        }
    }

    #[test]
    fn leaves_partition_training_rows() {
        let (x, y) = unique_rows(2, 50, 3);
        let cfg = ForestConfig {
            trees: 3,
            max_depth: Some(3),
            bootstrap: false,
        };
        let m = ForestModel::fit(&x, &y, 2, &cfg, 4).unwrap();
        for t in &m.trees {
            let mut hits = vec![0usize; t.nodes.len()];
            for row in &x {
                hits[t.leaf_for(row)] += 1;
            }
            for (i, node) in t.nodes.iter().enumerate() {
                if let TreeNode::Leaf { rows, .. } = node {
                    assert_eq!(hits[i], *rows);
                }
            }
        }
    }

    #[test]
    fn identical_across_thread_counts() {
        let (x, y) = unique_rows(1, 200, 8);
        let cfg = ForestConfig {
            trees: 20,
            ..ForestConfig::default()
        };
        let fit = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ForestModel::fit(&x, &y, 2, &cfg, 11).unwrap())
        };
        let one = fit(1);
        assert_eq!(one, fit(2));
        assert_eq!(one, fit(8));
        assert_ne!(one, ForestModel::fit(&x, &y, 2, &cfg, 12).unwrap());
    }

    #[test]
    fn constant_rows_make_a_single_leaf() {
        let x = vec![vec![1.0, 1.0]; 4];
        let y = vec![Label(0), Label(1), Label(1), Label(1)];
        let cfg = ForestConfig {
            trees: 1,
            max_depth: None,
            bootstrap: false,
        };
        let m = ForestModel::fit(&x, &y, 2, &cfg, 0).unwrap();
        assert_eq!(m.trees[0].nodes.len(), 1);
        assert_eq!(m.predict_raw(&[1.0, 1.0]), vec![0.25, 0.75]);
    }
}
