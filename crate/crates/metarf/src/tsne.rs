//! Exact (dense) t-SNE used to embed reaction descriptors in 2-D before
//! Kennard-Stone selection.
//!
//! High-dimensional similarities are Gaussian conditional probabilities with
//! per-point bandwidths calibrated by bisection so each row's perplexity
//! (`2^H`) matches the target. The symmetrized joint matrix is matched
//! against Student-t joint probabilities in the projection by gradient
//! descent on the KL divergence, with the usual momentum schedule and early
//! exaggeration. Dataset sizes here stay in the low thousands, so no tree
//! approximation is needed.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::chacha;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TsneConfig {
    /// Target perplexity; capped at `(N - 1) / 3` for small inputs.
    pub perplexity: f64,
    pub output_dim: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    /// Iteration at which momentum switches to its final value.
    pub momentum_switch: usize,
    /// Early-exaggeration factor applied to the joint affinities.
    pub exaggeration_factor: f64,
    /// Number of initial iterations with exaggeration active.
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            output_dim: 2,
            learning_rate: 200.0,
            iterations: 1000,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            exaggeration_factor: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    fn validate(&self) -> Result<()> {
        if self.perplexity < 1.0 {
            return Err(Error::InvalidConfig("perplexity must be at least 1".into()));
        }
        if self.output_dim == 0 {
            return Err(Error::InvalidConfig("output_dim must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityKind {
    /// Each row is a probability distribution (sums to 1).
    Conditional,
    /// All entries together sum to 1 and the matrix is symmetric.
    Joint,
}

/// Pairwise affinity matrix with a zero diagonal.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub values: Array2<f64>,
    pub kind: AffinityKind,
}

impl AffinityMatrix {
    /// Check non-negativity, the zero diagonal, and the normalization
    /// property of the kind, all to 1e-9.
    pub fn validate(&self) -> Result<()> {
        let n = self.values.nrows();
        if self.values.ncols() != n {
            return Err(Error::invalid("affinity matrix must be square"));
        }
        for i in 0..n {
            if self.values[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("non-zero diagonal at {i}")));
            }
        }
        if self.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("negative or non-finite affinity"));
        }
        match self.kind {
            AffinityKind::Conditional => {
                for (i, row) in self.values.rows().into_iter().enumerate() {
                    let s: f64 = row.sum();
                    if (s - 1.0).abs() > 1e-9 {
                        return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
                    }
                }
            }
            AffinityKind::Joint => {
                let s: f64 = self.values.sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("joint matrix sums to {s}, not 1")));
                }
            }
        }
        Ok(())
    }
}

/// Row-parallel squared Euclidean distance matrix.
fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = par::map_indexed(n, |i| {
        let xi = x.row(i);
        (0..n)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    xi.iter()
                        .zip(x.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                }
            })
            .collect()
    });
    Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect()).unwrap()
}

const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 64;

/// Gaussian conditional affinities: row `i` holds `p(j | i)` with the
/// bandwidth of point `i` solved by bisection so the row perplexity `2^H`
/// matches the target within 1e-5 (at most 64 steps). A row whose
/// off-diagonal distances are all zero gets a uniform epsilon floor (1e-12)
/// before normalization instead of failing.
pub fn conditional_affinities(x: &Array2<f64>, perplexity: f64) -> Result<AffinityMatrix> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::invalid("need at least 3 points"));
    }
    if !(1.0..n as f64).contains(&perplexity) {
        return Err(Error::InvalidConfig(format!(
            "perplexity {perplexity} outside [1, {n})"
        )));
    }
    let d2 = squared_distances(x);

    let rows: Vec<Vec<f64>> = par::map_indexed(n, |i| calibrate_row(&d2, i, perplexity));
    let values = Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect()).unwrap();
    Ok(AffinityMatrix {
        values,
        kind: AffinityKind::Conditional,
    })
}

/// Solve one row's bandwidth and return the normalized row.
fn calibrate_row(d2: &Array2<f64>, i: usize, perplexity: f64) -> Vec<f64> {
    let n = d2.nrows();
    let mut row = vec![0.0; n];

    let degenerate = (0..n).all(|j| j == i || d2[(i, j)] == 0.0);
    if degenerate {
        for (j, v) in row.iter_mut().enumerate() {
            if j != i {
                *v = 1e-12;
            }
        }
        normalize_row(&mut row);
        return row;
    }

    // Shift exponents by the smallest off-diagonal distance so the kernel
    // never underflows entirely; the shift cancels in the normalization.
    let d_min = (0..n)
        .filter(|&j| j != i)
        .map(|j| d2[(i, j)])
        .fold(f64::INFINITY, f64::min);

    let mut beta = 1.0; // 1 / (2 sigma^2)
    let mut beta_low = f64::NEG_INFINITY;
    let mut beta_high = f64::INFINITY;

    for _ in 0..MAX_BISECTIONS {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j == i {
                0.0
            } else {
                (-beta * (d2[(i, j)] - d_min)).exp()
            };
        }
        normalize_row(&mut row);

        let entropy_bits: f64 = row
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.log2())
            .sum();
        let current = entropy_bits.exp2();
        let diff = current - perplexity;
        if diff.abs() <= PERPLEXITY_TOL {
            break;
        }
        if diff > 0.0 {
            // too many effective neighbors: narrow the kernel
            beta_low = beta;
            beta = if beta_high.is_finite() {
                (beta + beta_high) / 2.0
            } else {
                beta * 2.0
            };
        } else {
            beta_high = beta;
            beta = if beta_low.is_finite() {
                (beta + beta_low) / 2.0
            } else {
                beta / 2.0
            };
        }
    }
    row
}

fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Symmetrized joint affinities: `p_ij = (p(i|j) + p(j|i)) / 2N`.
pub fn symmetrize(cond: &AffinityMatrix) -> Result<AffinityMatrix> {
    if cond.kind != AffinityKind::Conditional {
        return Err(Error::invalid("symmetrize expects a conditional matrix"));
    }
    cond.validate()?;
    let n = cond.values.nrows();
    let scale = 1.0 / (2.0 * n as f64);
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                values[(i, j)] = (cond.values[(i, j)] + cond.values[(j, i)]) * scale;
            }
        }
    }
    Ok(AffinityMatrix {
        values,
        kind: AffinityKind::Joint,
    })
}

/// Student-t joint affinities of a projection:
/// `q_ij ∝ (1 + ||z_i - z_j||^2)^-1`, normalized over all ordered pairs.
pub fn projection_affinities(z: &Array2<f64>) -> Result<AffinityMatrix> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::invalid("need at least 2 points"));
    }
    let weights = student_weights(z);
    let total: f64 = weights.rows().into_iter().map(|r| r.sum()).sum();
    Ok(AffinityMatrix {
        values: weights.mapv(|w| w / total),
        kind: AffinityKind::Joint,
    })
}

/// Unnormalized t-kernel weights `(1 + d^2)^-1` with zero diagonal.
fn student_weights(z: &Array2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let rows: Vec<Vec<f64>> = par::map_indexed(n, |i| {
        let zi = z.row(i);
        (0..n)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    let d2: f64 = zi
                        .iter()
                        .zip(z.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    1.0 / (1.0 + d2)
                }
            })
            .collect()
    });
    Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect()).unwrap()
}

/// `KL(P || Q) = sum_{i != j} p_ij ln(p_ij / q_ij)`, with `0 ln 0 = 0`.
/// Errors if some `q_ij` vanishes where `p_ij > 0` (the t-kernel keeps Q
/// strictly positive, so this only fires on malformed inputs).
pub fn kl_divergence(p: &AffinityMatrix, q: &AffinityMatrix) -> Result<f64> {
    if p.kind != AffinityKind::Joint || q.kind != AffinityKind::Joint {
        return Err(Error::invalid("KL divergence expects joint matrices"));
    }
    if p.values.dim() != q.values.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.values.nrows(),
            got: q.values.nrows(),
        });
    }
    let mut kl = 0.0;
    for (pv, qv) in p.values.iter().zip(q.values.iter()) {
        if *pv > 0.0 {
            if *qv <= 0.0 {
                return Err(Error::invalid("q_ij = 0 where p_ij > 0"));
            }
            kl += pv * (pv / qv).ln();
        }
    }
    Ok(kl)
}

/// Analytic KL gradient with respect to the projection:
/// `grad_i = 4 sum_j (p_ij - q_ij) (1 + ||z_i - z_j||^2)^-1 (z_i - z_j)`.
pub fn kl_gradient(z: &Array2<f64>, p_joint: &Array2<f64>) -> Result<Array2<f64>> {
    let n = z.nrows();
    if p_joint.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p_joint.nrows(),
        });
    }
    let weights = student_weights(z);
    let total: f64 = weights.rows().into_iter().map(|r| r.sum()).sum();
    Ok(gradient_given_weights(z, p_joint, &weights, total))
}

fn gradient_given_weights(
    z: &Array2<f64>,
    p: &Array2<f64>,
    weights: &Array2<f64>,
    total: f64,
) -> Array2<f64> {
    let n = z.nrows();
    let d = z.ncols();
    let rows: Vec<Vec<f64>> = par::map_indexed(n, |i| {
        let mut g = vec![0.0; d];
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = weights[(i, j)];
            let q = w / total;
            let f = 4.0 * (p[(i, j)] - q) * w;
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += f * (z[(i, k)] - z[(j, k)]);
            }
        }
        g
    });
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).unwrap()
}

/// A fitted projection and the per-iteration KL trace.
#[derive(Debug, Clone)]
pub struct Embedding {
    /// `N × output_dim` coordinates.
    pub coords: Array2<f64>,
    /// KL divergence (without exaggeration) measured at the start of each
    /// iteration; length equals `config.iterations`.
    pub kl_trace: Vec<f64>,
}

/// Run t-SNE. The projection starts from a seeded Gaussian (sigma 1e-4) and
/// follows gradient descent with the configured momentum schedule, early
/// exaggeration, and the reference optimizer's per-coordinate adaptive
/// gains. Deterministic per seed.
pub fn tsne_embed(x: &Array2<f64>, config: &TsneConfig) -> Result<Embedding> {
    config.validate()?;
    let n = x.nrows();
    if n < 3 {
        return Err(Error::invalid("need at least 3 points"));
    }
    let effective_perplexity = config.perplexity.min((n as f64 - 1.0) / 3.0).max(1.0);
    let p = symmetrize(&conditional_affinities(x, effective_perplexity)?)?;

    let mut rng = chacha(config.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut z = Array2::zeros((n, config.output_dim));
    for v in z.iter_mut() {
        *v = normal.sample(&mut rng);
    }

    let mut velocity: Array2<f64> = Array2::zeros((n, config.output_dim));
    let mut gains: Array2<f64> = Array2::from_elem((n, config.output_dim), 1.0);
    let mut kl_trace = Vec::with_capacity(config.iterations);
    let p_exaggerated = p.values.mapv(|v| v * config.exaggeration_factor);

    for iteration in 0..config.iterations {
        let weights = student_weights(&z);
        let total: f64 = weights.rows().into_iter().map(|r| r.sum()).sum();

        // Reported KL always uses the un-exaggerated affinities.
        let mut kl = 0.0;
        for (pv, wv) in p.values.iter().zip(weights.iter()) {
            if *pv > 0.0 {
                let q = wv / total;
                if q <= 0.0 {
                    return Err(Error::NonFinite {
                        what: "projection affinity".into(),
                        context: format!("iteration {iteration}"),
                    });
                }
                kl += pv * (pv / q).ln();
            }
        }
        kl_trace.push(kl);

        let exaggerate = iteration < config.exaggeration_iters;
        let grad = if exaggerate {
            let p_ex = p.values.mapv(|v| v * config.exaggeration_factor);
            gradient_given_weights(&z, &p_ex, &weights, total)
        } else {
            gradient_given_weights(&z, &p.values, &weights, total)
        };

        let momentum = if iteration < config.momentum_switch {
            config.momentum_initial
        } else {
            config.momentum_final
        };
        // Per-coordinate adaptive gains (delta-bar-delta): grow additively
        // while descent is consistent, shrink geometrically on oscillation.
        for ((gain, &g), v) in gains.iter_mut().zip(grad.iter()).zip(velocity.iter()) {
            *gain = if (g > 0.0) != (*v > 0.0) {
                *gain + 0.2
            } else {
                *gain * 0.8
            };
            if *gain < 0.01 {
                *gain = 0.01;
            }
        }
        for ((v, &g), &gain) in velocity.iter_mut().zip(grad.iter()).zip(gains.iter()) {
            *v = momentum * *v - config.learning_rate * gain * g;
        }
        z += &velocity;

        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "projection coordinates".into(),
                context: format!("iteration {iteration}"),
            });
        }
    }

    Ok(Embedding {
        coords: z,
        kl_trace,
    })
}
