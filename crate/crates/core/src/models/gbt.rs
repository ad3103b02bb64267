//! Gradient-boosted regression trees on squared error with quantile-binned
//! split search.

use serde::{Deserialize, Serialize};

use super::DesignMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub max_depth: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub n_bins: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            max_depth: 6,
            n_rounds: 200,
            learning_rate: 0.1,
            min_samples_leaf: 20,
            n_bins: 256,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::Config("gbt max_depth must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "gbt learning_rate {} must be in (0, 1]",
                self.learning_rate
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("gbt min_samples_leaf must be >= 1".into()));
        }
        if !(2..=65536).contains(&self.n_bins) {
            return Err(Error::Config(format!(
                "gbt n_bins {} must be in [2, 65536]",
                self.n_bins
            )));
        }
        Ok(())
    }
}

/// Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub col_names: Vec<String>,
    pub params: GbtParams,
    pub base_prediction: f64,
    pub trees: Vec<TreeNode>,
    /// Training MSE before the first tree and after each round.
    pub train_mse: Vec<f64>,
}

impl GbtModel {
    /// `x` must already be aligned to `col_names`.
    pub(crate) fn predict_aligned(&self, x: &DesignMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .map(|i| {
                let row = x.row(i);
                self.base_prediction
                    + self.params.learning_rate
                        * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
            })
            .collect()
    }
}

/// Cut points such that bin `b` holds values in `(cuts[b-1], cuts[b]]`.
pub(crate) fn quantile_cuts(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut distinct = sorted.clone();
    distinct.dedup();
    let max = *distinct.last().expect("non-empty column");
    let mut cuts: Vec<f64> = if distinct.len() <= n_bins {
        distinct
    } else {
        let n = sorted.len();
        let mut c: Vec<f64> = (1..n_bins).map(|i| sorted[i * n / n_bins]).collect();
        c.dedup();
        c
    };
    cuts.retain(|&c| c < max);
    cuts
}

struct Binned {
    /// `bins[f][i]`
    bins: Vec<Vec<u16>>,
    cuts: Vec<Vec<f64>>,
}

fn bin_columns(x: &DesignMatrix, n_bins: usize) -> Binned {
    let mut bins = Vec::with_capacity(x.n_cols());
    let mut cuts = Vec::with_capacity(x.n_cols());
    for j in 0..x.n_cols() {
        let col = x.column(j);
        let c = quantile_cuts(&col, n_bins);
        bins.push(
            col.iter()
                .map(|v| c.partition_point(|&t| t < *v) as u16)
                .collect(),
        );
        cuts.push(c);
    }
    Binned { bins, cuts }
}

struct Split {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct Builder<'a> {
    binned: &'a Binned,
    residual: &'a [f64],
    params: &'a GbtParams,
    /// Leaf value reached by each training row in the current tree.
    leaf_of_row: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl Builder<'_> {
    fn best_split(&mut self, rows: &[usize]) -> Option<Split> {
        let n = rows.len();
        let min_leaf = self.params.min_samples_leaf;
        if n < 2 * min_leaf {
            return None;
        }
        let total: f64 = rows.iter().map(|&i| self.residual[i]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<Split> = None;
        for (f, col) in self.binned.bins.iter().enumerate() {
            let nb = self.binned.cuts[f].len() + 1;
            if nb < 2 {
                continue;
            }
            self.sums[..nb].fill(0.0);
            self.counts[..nb].fill(0);
            for &i in rows {
                let b = col[i] as usize;
                self.sums[b] += self.residual[i];
                self.counts[b] += 1;
            }
            let (mut sl, mut nl) = (0.0, 0usize);
            for b in 0..nb - 1 {
                sl += self.sums[b];
                nl += self.counts[b];
                let nr = n - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let sr = total - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
                if gain > 0.0 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(Split {
                        feature: f,
                        bin: b,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> TreeNode {
        let split = if depth < self.params.max_depth {
            self.best_split(rows)
        } else {
            None
        };
        let Some(split) = split else {
            let value = rows.iter().map(|&i| self.residual[i]).sum::<f64>() / rows.len() as f64;
            for &i in rows.iter() {
                self.leaf_of_row[i] = value;
            }
            return TreeNode::Leaf { value };
        };
        let col = &self.binned.bins[split.feature];
        let mut k = 0;
        for j in 0..rows.len() {
            if col[rows[j]] as usize <= split.bin {
                rows.swap(j, k);
                k += 1;
            }
        }
        let (l, r) = rows.split_at_mut(k);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        TreeNode::Split {
            feature: split.feature,
            threshold: self.binned.cuts[split.feature][split.bin],
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter()
        .zip(pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64
}

pub fn fit_gbt(x: &DesignMatrix, y: &[f64], params: &GbtParams) -> Result<GbtModel> {
    params.validate()?;
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::Data(format!("{} labels for {n} rows", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("labels contain non-finite values".into()));
    }
    let binned = bin_columns(x, params.n_bins);
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut residual: Vec<f64> = y.iter().map(|v| v - base).collect();
    let mut train_mse = vec![mse(y, &pred)];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let max_bins = binned.cuts.iter().map(|c| c.len() + 1).max().unwrap_or(1);
    let mut rows: Vec<usize> = (0..n).collect();
    for _ in 0..params.n_rounds {
        let mut b = Builder {
            binned: &binned,
            residual: &residual,
            params,
            leaf_of_row: vec![0.0; n],
            sums: vec![0.0; max_bins],
            counts: vec![0; max_bins],
        };
        rows.iter_mut().enumerate().for_each(|(i, r)| *r = i);
        let tree = b.build(&mut rows, 0);
        let leaf = b.leaf_of_row;
        for i in 0..n {
            pred[i] += params.learning_rate * leaf[i];
            residual[i] = y[i] - pred[i];
        }
        train_mse.push(mse(y, &pred));
        trees.push(tree);
    }
    Ok(GbtModel {
        col_names: x.col_names().to_vec(),
        params: *params,
        base_prediction: base,
        trees,
        train_mse,
    })
}
