//! CART regression trees with bootstrap bagging and per-node random feature
//! subsets.
//!
//! A fitted [`Forest`] serves two purposes: the arithmetic mean of its tree
//! predictions is the baseline regressor, and the vector of per-tree
//! predictions (`tree_outputs`) is the input consumed by the meta-learned
//! head.
//!
//! Split search minimizes the summed within-child squared error (weighted
//! variance reduction). Candidate thresholds are midpoints between
//! consecutive distinct sorted feature values; a point exactly at a
//! threshold routes left. Ties between equal-gain splits resolve to the
//! lowest feature index, then the smallest threshold; scores within
//! [`SPLIT_SCORE_RTOL`] of each other count as equal gain (different
//! features can produce the same partition, and summation order must not
//! decide such ties), which makes the exhaustive-search oracle comparison
//! exact.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{chacha, derive_seed_indexed};

/// Relative margin below which two split scores count as equal gain.
pub const SPLIT_SCORE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

/// A regression tree stored as a node arena; the root is node 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTree {
    n_features: usize,
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Index of the unique leaf the vector routes to.
    pub fn route(&self, x: ArrayView1<'_, f64>) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        match &self.nodes[self.route(x)] {
            Node::Leaf { value, .. } => Ok(*value),
            Node::Split { .. } => unreachable!("route always ends on a leaf"),
        }
    }

    /// Feature indices used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

/// Forest hyperparameters. `mtry = None` resolves to `ceil(p / 3)` at fit
/// time; `max_depth = None` means unlimited; `bootstrap = false` fits every
/// tree on the full sample (debug / oracle comparisons).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            mtry: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn resolve_mtry(&self, p: usize) -> Result<usize> {
        let mtry = self.mtry.unwrap_or_else(|| p.div_ceil(3));
        if mtry == 0 || mtry > p {
            return Err(Error::InvalidConfig(format!(
                "mtry {mtry} outside 1..={p}"
            )));
        }
        Ok(mtry)
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig(
                "min_samples_leaf must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    params: ForestParams,
    tree_seeds: Vec<u64>,
    n_features: usize,
}

fn check_xy(x: &Array2<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::invalid("cannot fit on zero rows"));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite target value"));
    }
    Ok(())
}

/// Fit a single CART regression tree on all rows of `(x, y)`.
pub fn fit_tree(
    x: &Array2<f64>,
    y: &[f64],
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree> {
    check_xy(x, y)?;
    params.validate()?;
    let indices: Vec<usize> = (0..x.nrows()).collect();
    fit_tree_on_indices(x, y, indices, params, rng)
}

fn fit_tree_on_indices(
    x: &Array2<f64>,
    y: &[f64],
    indices: Vec<usize>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree> {
    let mtry = params.resolve_mtry(x.ncols())?;
    let mut builder = TreeBuilder {
        x,
        y,
        max_depth: params.max_depth,
        min_leaf: params.min_samples_leaf,
        mtry,
        nodes: Vec::new(),
    };
    builder.grow(indices, 0, rng);
    Ok(DecisionTree {
        n_features: x.ncols(),
        nodes: builder.nodes,
    })
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    max_depth: Option<usize>,
    min_leaf: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, indices: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = indices.len();
        let mean = indices.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let sse: f64 = indices.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();

        let depth_reached = self.max_depth.is_some_and(|d| depth >= d);
        if sse <= 0.0 || n < 2 * self.min_leaf || depth_reached {
            return self.push_leaf(mean, n);
        }

        let best = match self.best_split(&indices, sse, rng) {
            Some(b) => b,
            None => return self.push_leaf(mean, n),
        };

        // Partition preserving the parent's index order.
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.x[(i, best.feature)] <= best.threshold);

        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[at]
        {
            *l = left;
            *r = right;
        }
        at
    }

    fn push_leaf(&mut self, value: f64, n_samples: usize) -> usize {
        self.nodes.push(Node::Leaf { value, n_samples });
        self.nodes.len() - 1
    }

    /// Best (feature, threshold) over a random `mtry`-subset of features,
    /// minimizing summed within-child squared error. Candidate features are
    /// scanned in ascending index order and thresholds in ascending value
    /// order; a candidate replaces the incumbent only when it is better by
    /// more than the equal-gain margin, so ties resolve to the lowest
    /// feature index, then the smallest threshold.
    fn best_split(
        &self,
        indices: &[usize],
        parent_sse: f64,
        rng: &mut ChaCha8Rng,
    ) -> Option<BestSplit> {
        let p = self.x.ncols();
        let mut candidates: Vec<usize> = index::sample(rng, p, self.mtry).into_iter().collect();
        candidates.sort_unstable();

        let tol = SPLIT_SCORE_RTOL * parent_sse.max(1.0);
        let n = indices.len();
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);

        for &feature in &candidates {
            pairs.clear();
            pairs.extend(
                indices
                    .iter()
                    .map(|&i| (self.x[(i, feature)], self.y[i])),
            );
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

            let total_sum: f64 = pairs.iter().map(|&(_, t)| t).sum();
            let total_sq: f64 = pairs.iter().map(|&(_, t)| t * t).sum();

            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for split_at in 1..n {
                let (v_prev, t_prev) = pairs[split_at - 1];
                left_sum += t_prev;
                left_sq += t_prev * t_prev;
                let v_next = pairs[split_at].0;
                if v_next <= v_prev {
                    continue; // not a boundary between distinct values
                }
                let n_left = split_at;
                let n_right = n - split_at;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let sse_left = left_sq - left_sum * left_sum / n_left as f64;
                let right_sum = total_sum - left_sum;
                let sse_right =
                    (total_sq - left_sq) - right_sum * right_sum / n_right as f64;
                let score = sse_left + sse_right;
                let improves = score < parent_sse - tol
                    && best.as_ref().is_none_or(|b| score < b.score - tol);
                if improves {
                    best = Some(BestSplit {
                        score,
                        feature,
                        threshold: (v_prev + v_next) * 0.5,
                    });
                }
            }
        }
        best
    }
}

/// Fit a bagged forest. Tree `m` draws its bootstrap sample (size `N`, with
/// replacement) and its per-node feature subsets from a ChaCha8 generator
/// seeded by `derive_seed_indexed(params.seed, m)`, so trees are
/// reproducible independently of fitting order.
pub fn fit_forest(x: &Array2<f64>, y: &[f64], params: &ForestParams) -> Result<Forest> {
    check_xy(x, y)?;
    params.validate()?;
    params.resolve_mtry(x.ncols())?;

    let n = x.nrows();
    let tree_seeds: Vec<u64> = (0..params.n_trees)
        .map(|m| derive_seed_indexed(params.seed, m as u64))
        .collect();

    let results: Vec<Result<DecisionTree>> = par::map_indexed(params.n_trees, |m| {
        let mut rng = chacha(tree_seeds[m]);
        let indices: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        fit_tree_on_indices(x, y, indices, params, &mut rng)
    });
    let trees = results.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(Forest {
        trees,
        params: params.clone(),
        tree_seeds,
        n_features: x.ncols(),
    })
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn tree_seeds(&self) -> &[u64] {
        &self.tree_seeds
    }

    /// The length-`M` vector of per-tree predictions for one input; this is
    /// the head's input representation.
    pub fn tree_outputs(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self
            .trees
            .iter()
            .map(|t| match &t.nodes[t.route(x)] {
                Node::Leaf { value, .. } => *value,
                Node::Split { .. } => unreachable!(),
            })
            .collect())
    }

    /// Mean of the tree outputs: the baseline forest prediction.
    pub fn predict_mean(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        let outputs = self.tree_outputs(x)?;
        Ok(outputs.iter().sum::<f64>() / outputs.len() as f64)
    }

    /// Tree-output vectors for every row of `xs` (rows × trees).
    pub fn tree_outputs_matrix(&self, xs: &Array2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: xs.ncols(),
            });
        }
        let rows: Vec<Vec<f64>> = par::map_indexed(xs.nrows(), |i| {
            self.tree_outputs(xs.row(i)).expect("dims checked above")
        });
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec((xs.nrows(), self.trees.len()), flat)
            .map_err(|e| Error::invalid(format!("tree output shape: {e}")))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let forest: Forest = serde_json::from_reader(std::io::BufReader::new(file))?;
        Ok(forest)
    }
}
