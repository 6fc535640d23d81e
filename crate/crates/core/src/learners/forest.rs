//! Bagged CART regression trees with variance-reduction splits.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Model;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means `ceil(p / 3)`.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 200,
            max_depth: 8,
            min_leaf: 5,
            mtry: None,
            seed: 0,
        }
    }
}

const LEAF: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    feature: u32,
    left: u32,
    right: u32,
    /// Split threshold for internal nodes, prediction for leaves.
    value: f64,
}

#[derive(Clone, Debug)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut node = &self.nodes[0];
        while node.feature != LEAF {
            let next = if x[(row, node.feature as usize)] <= node.value {
                node.left
            } else {
                node.right
            };
            node = &self.nodes[next as usize];
        }
        node.value
    }
}

#[derive(Clone, Debug)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

impl Model for Forest {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let scale = 1.0 / self.trees.len() as f64;
        (0..x.nrows())
            .map(|i| self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>() * scale)
            .collect()
    }
}

struct TreeBuilder<'a> {
    columns: Vec<&'a [f64]>,
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    rng: ChaCha8Rng,
    features: Vec<usize>,
    buf: Vec<(f64, f64)>,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, value: f64) -> u32 {
        self.nodes.push(Node {
            feature: LEAF,
            left: 0,
            right: 0,
            value,
        });
        (self.nodes.len() - 1) as u32
    }

    fn build(&mut self, samples: &mut [u32], depth: usize) -> u32 {
        let m = samples.len();
        let (sum, sum_sq) = samples.iter().fold((0.0, 0.0), |(s, q), &i| {
            let v = self.y[i as usize];
            (s + v, q + v * v)
        });
        let mean = sum / m as f64;
        let impurity = sum_sq - sum * mean;
        if depth >= self.max_depth || m < 2 * self.min_leaf || impurity <= 1e-12 * (m as f64) {
            return self.leaf(mean);
        }
        let Some(split) = self.best_split(samples, sum) else {
            return self.leaf(mean);
        };

        let column = self.columns[split.feature];
        let mut boundary = 0;
        for j in 0..m {
            if column[samples[j] as usize] <= split.threshold {
                samples.swap(boundary, j);
                boundary += 1;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            feature: split.feature as u32,
            left: 0,
            right: 0,
            value: split.threshold,
        });
        let (left, right) = samples.split_at_mut(boundary);
        let left = self.build(left, depth + 1);
        let right = self.build(right, depth + 1);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id as u32
    }

    fn best_split(&mut self, samples: &[u32], total: f64) -> Option<Split> {
        let m = samples.len();
        let p = self.features.len();
        for j in 0..self.mtry {
            let pick = self.rng.random_range(j..p);
            self.features.swap(j, pick);
        }
        let parent = total * total / m as f64;
        let mut best_score = parent + 1e-12 * parent.abs().max(1.0);
        let mut best = None;
        for f in 0..self.mtry {
            let feature = self.features[f];
            let column = self.columns[feature];
            self.buf.clear();
            self.buf
                .extend(samples.iter().map(|&i| (column[i as usize], self.y[i as usize])));
            self.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for pos in 1..m {
                left_sum += self.buf[pos - 1].1;
                if pos < self.min_leaf || m - pos < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.buf[pos - 1].0, self.buf[pos].0);
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / pos as f64 + right_sum * right_sum / (m - pos) as f64;
                if score > best_score {
                    best_score = score;
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(Split {
                        feature,
                        threshold: if mid < hi { mid } else { lo },
                    });
                }
            }
        }
        best
    }
}

/// Fits a random forest regressor; deterministic for a given `params.seed`.
pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], params: &ForestParams) -> Result<Forest> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::Contract(format!("{n} feature rows for {} targets", y.len())));
    }
    if params.trees == 0 || params.min_leaf == 0 {
        return Err(Error::Config("forest needs at least one tree and min_leaf >= 1".into()));
    }
    if n < 2 * params.min_leaf {
        return Err(Error::Contract(format!(
            "forest needs at least {} rows, got {n}",
            2 * params.min_leaf
        )));
    }
    let columns: Vec<&[f64]> = (0..p).map(|j| &x.as_slice()[j * n..(j + 1) * n]).collect();
    let mtry = params.mtry.unwrap_or_else(|| p.div_ceil(3)).clamp(1, p.max(1));

    let trees = (0..params.trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let mut samples: Vec<u32> = (0..n).map(|_| rng.random_range(0..n as u32)).collect();
            let mut builder = TreeBuilder {
                columns: columns.clone(),
                y,
                max_depth: params.max_depth,
                min_leaf: params.min_leaf,
                mtry: if p == 0 { 0 } else { mtry },
                rng,
                features: (0..p).collect(),
                buf: Vec::with_capacity(n),
                nodes: Vec::new(),
            };
            builder.build(&mut samples, 0);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();
    Ok(Forest { trees })
}
