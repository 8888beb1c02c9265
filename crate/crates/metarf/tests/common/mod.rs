//! Independent oracles shared by the acceptance suite: a brute-force CART
//! fitter, a from-scratch Kennard-Stone re-implementation, and
//! finite-difference helpers. These deliberately avoid the library's code
//! paths (two-pass variance instead of prefix sums, recomputed distances
//! instead of cached minima) while sharing the documented tie rules.

use ndarray::Array2;

/// Exhaustive best-split CART for regression: every feature, every midpoint
/// between consecutive distinct sorted values, two-pass SSE scoring,
/// improvement counted only beyond the shared equal-gain margin, ties to
/// the lowest feature then the smallest threshold. Unlimited depth,
/// one-sample leaves allowed.
pub struct OracleTree {
    nodes: Vec<OracleNode>,
}

enum OracleNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

fn sse(x: &[f64]) -> f64 {
    let m = mean(x.iter().copied(), x.len());
    x.iter().map(|v| (v - m) * (v - m)).sum()
}

impl OracleTree {
    pub fn fit(x: &Array2<f64>, y: &[f64]) -> Self {
        let mut tree = OracleTree { nodes: Vec::new() };
        let indices: Vec<usize> = (0..x.nrows()).collect();
        tree.grow(x, y, indices);
        tree
    }

    fn grow(&mut self, x: &Array2<f64>, y: &[f64], indices: Vec<usize>) -> usize {
        let targets: Vec<f64> = indices.iter().map(|&i| y[i]).collect();
        let node_mean = mean(targets.iter().copied(), targets.len());
        let node_sse = sse(&targets);
        if node_sse <= 0.0 || indices.len() < 2 {
            self.nodes.push(OracleNode::Leaf { value: node_mean });
            return self.nodes.len() - 1;
        }

        let tol = metarf::forest::SPLIT_SCORE_RTOL * node_sse.max(1.0);
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        for feature in 0..x.ncols() {
            let mut values: Vec<f64> = indices.iter().map(|&i| x[(i, feature)]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for pair in values.windows(2) {
                let threshold = (pair[0] + pair[1]) * 0.5;
                let left: Vec<f64> = indices
                    .iter()
                    .filter(|&&i| x[(i, feature)] <= threshold)
                    .map(|&i| y[i])
                    .collect();
                let right: Vec<f64> = indices
                    .iter()
                    .filter(|&&i| x[(i, feature)] > threshold)
                    .map(|&i| y[i])
                    .collect();
                if left.is_empty() || right.is_empty() {
                    continue;
                }
                let score = sse(&left) + sse(&right);
                let improves =
                    score < node_sse - tol && best.map_or(true, |(s, _, _)| score < s - tol);
                if improves {
                    best = Some((score, feature, threshold));
                }
            }
        }

        match best {
            None => {
                self.nodes.push(OracleNode::Leaf { value: node_mean });
                self.nodes.len() - 1
            }
            Some((_, feature, threshold)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                    .into_iter()
                    .partition(|&i| x[(i, feature)] <= threshold);
                let at = self.nodes.len();
                self.nodes.push(OracleNode::Split {
                    feature,
                    threshold,
                    left: 0,
                    right: 0,
                });
                let left = self.grow(x, y, left_idx);
                let right = self.grow(x, y, right_idx);
                if let OracleNode::Split {
                    left: l, right: r, ..
                } = &mut self.nodes[at]
                {
                    *l = left;
                    *r = right;
                }
                at
            }
        }
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first() {
            Some(OracleNode::Split {
                feature, threshold, ..
            }) => Some((*feature, *threshold)),
            _ => None,
        }
    }

    pub fn predict(&self, row: ndarray::ArrayView1<'_, f64>) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                OracleNode::Leaf { value } => return *value,
                OracleNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Greedy max-min selection recomputing every distance from scratch, with
/// the shared lowest-index tie rule.
pub fn oracle_kennard_stone(points: &Array2<f64>, k: usize) -> Vec<usize> {
    let n = points.nrows();
    let dist = |a: usize, b: usize| -> f64 {
        points
            .row(a)
            .iter()
            .zip(points.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut best_pair = (0, 1);
    let mut best_d = f64::NEG_INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            if dist(i, j) > best_d {
                best_d = dist(i, j);
                best_pair = (i, j);
            }
        }
    }
    let mut selected = vec![best_pair.0, best_pair.1];
    while selected.len() < k {
        let mut best_r = None;
        let mut best_min = f64::NEG_INFINITY;
        for r in 0..n {
            if selected.contains(&r) {
                continue;
            }
            let min_d = selected
                .iter()
                .map(|&s| dist(r, s))
                .fold(f64::INFINITY, f64::min);
            if min_d > best_min {
                best_min = min_d;
                best_r = Some(r);
            }
        }
        selected.push(best_r.expect("k <= n"));
    }
    selected
}

/// Per-coordinate relative error with an absolute floor for near-zero pairs.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
