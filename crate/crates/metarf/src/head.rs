//! The differentiable head: a small fully connected network with ReLU hidden
//! layers and a scalar linear output, plus its gradients and the Adam
//! optimizer used for outer-loop updates.
//!
//! The default architecture is `d_in -> 40 -> 40 -> 1`. When the head sits
//! on a forest, `d_in` is the tree count and the first-layer weights act as
//! per-tree attention; in the forest-free ablation `d_in` is the raw feature
//! dimension.
//!
//! The task loss is the *summed* squared error over a set (no averaging);
//! everything downstream (inner learning rate, meta-gradients) is calibrated
//! to that convention.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::chacha;

pub const DEFAULT_HIDDEN: [usize; 2] = [40, 40];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in` weight matrix.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameters of the head network. The same type represents meta-trained
/// parameters and task-adapted parameters; adaptation produces a new value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadParams {
    pub layers: Vec<DenseLayer>,
}

impl HeadParams {
    /// Initialize with the default two hidden layers of width 40.
    pub fn init(d_in: usize, seed: u64) -> Result<Self> {
        Self::init_with_hidden(d_in, &DEFAULT_HIDDEN, seed)
    }

    /// Initialize with explicit hidden widths (used by micro-net tests).
    ///
    /// Weights are scaled-uniform with bound `sqrt(6 / (fan_in + fan_out))`,
    /// drawn layer by layer in row-major order from a ChaCha8 stream; biases
    /// start at zero.
    pub fn init_with_hidden(d_in: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if d_in == 0 {
            return Err(Error::InvalidConfig("d_in must be at least 1".into()));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("hidden widths must be at least 1".into()));
        }
        let mut dims = vec![d_in];
        dims.extend_from_slice(hidden);
        dims.push(1);

        let mut rng = chacha(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut weights = Array2::zeros((fan_out, fan_in));
                for r in 0..fan_out {
                    for c in 0..fan_in {
                        weights[(r, c)] = rng.random_range(-bound..bound);
                    }
                }
                DenseLayer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(HeadParams { layers })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    /// Layer widths including input and output: `[d_in, h1, .., 1]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.d_in()];
        dims.extend(self.layers.iter().map(|l| l.weights.nrows()));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Scalar output `w_out · relu(.. relu(W1 x + b1) ..) + b_out`.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                got: x.len(),
            });
        }
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.dot(&a) + &layer.bias;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a[0])
    }

    pub fn forward_batch(&self, xs: &Array2<f64>) -> Result<Vec<f64>> {
        (0..xs.nrows()).map(|i| self.forward(xs.row(i))).collect()
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: Array2::zeros(l.weights.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    /// `self += alpha * other`, elementwise over all parameters.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Flatten in a fixed order (per layer: weights row-major, then bias).
    /// Used by finite-difference checks.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Rebuild parameters with this head's shape from a flat vector.
    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut params = self.zeros_like();
        let mut at = 0;
        for l in &mut params.layers {
            for v in l.weights.iter_mut() {
                *v = flat[at];
                at += 1;
            }
            for v in l.bias.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        Ok(params)
    }
}

fn check_batch(params: &HeadParams, xs: &Array2<f64>, ys: &[f64]) -> Result<()> {
    if xs.nrows() == 0 {
        return Err(Error::invalid("empty example set"));
    }
    if xs.nrows() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.nrows(),
            got: ys.len(),
        });
    }
    if xs.ncols() != params.d_in() {
        return Err(Error::DimensionMismatch {
            expected: params.d_in(),
            got: xs.ncols(),
        });
    }
    Ok(())
}

/// Summed squared error over the set: `sum_i (f(x_i) - y_i)^2`.
pub fn task_loss(params: &HeadParams, xs: &Array2<f64>, ys: &[f64]) -> Result<f64> {
    check_batch(params, xs, ys)?;
    let mut loss = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let pred = params.forward(xs.row(i))?;
        loss += (pred - y) * (pred - y);
    }
    Ok(loss)
}

/// `grad += scale * (col ⊗ row)`.
fn add_outer(grad: &mut Array2<f64>, col: &Array1<f64>, row: &Array1<f64>, scale: f64) {
    for (r, &c) in col.iter().enumerate() {
        let f = scale * c;
        if f == 0.0 {
            continue;
        }
        let mut grad_row = grad.row_mut(r);
        for (g, &v) in grad_row.iter_mut().zip(row.iter()) {
            *g += f * v;
        }
    }
}

struct ForwardTrace {
    /// Post-activation values per layer; index 0 is the input.
    activations: Vec<Array1<f64>>,
    /// Pre-activation values of the hidden layers.
    pre_activations: Vec<Array1<f64>>,
    output: f64,
}

fn forward_trace(params: &HeadParams, x: ArrayView1<'_, f64>) -> ForwardTrace {
    let last = params.layers.len() - 1;
    let mut activations = vec![x.to_owned()];
    let mut pre_activations = Vec::with_capacity(last);
    for (l, layer) in params.layers.iter().enumerate() {
        let z = layer.weights.dot(activations.last().unwrap()) + &layer.bias;
        if l < last {
            pre_activations.push(z.clone());
            activations.push(z.mapv(|v| v.max(0.0)));
        } else {
            return ForwardTrace {
                activations,
                pre_activations,
                output: z[0],
            };
        }
    }
    unreachable!("network has at least one layer");
}

/// Loss and its gradient with respect to every parameter (summed over the
/// set, matching [`task_loss`]).
pub fn loss_and_grad(
    params: &HeadParams,
    xs: &Array2<f64>,
    ys: &[f64],
) -> Result<(f64, HeadParams)> {
    check_batch(params, xs, ys)?;
    let last = params.layers.len() - 1;
    let mut grad = params.zeros_like();
    let mut loss = 0.0;

    for (i, &y) in ys.iter().enumerate() {
        let trace = forward_trace(params, xs.row(i));
        let err = trace.output - y;
        loss += err * err;

        let delta_out = 2.0 * err;
        add_outer(
            &mut grad.layers[last].weights,
            &Array1::from_elem(1, delta_out),
            &trace.activations[last],
            1.0,
        );
        grad.layers[last].bias[0] += delta_out;

        // Gradient of the loss w.r.t. each hidden pre-activation.
        let mut upstream = params.layers[last].weights.row(0).to_owned() * delta_out;
        for l in (0..last).rev() {
            let gate = trace.pre_activations[l].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            let delta = &upstream * &gate;
            add_outer(&mut grad.layers[l].weights, &delta, &trace.activations[l], 1.0);
            for (g, &d) in grad.layers[l].bias.iter_mut().zip(delta.iter()) {
                *g += d;
            }
            if l > 0 {
                upstream = params.layers[l].weights.t().dot(&delta);
            }
        }
    }
    Ok((loss, grad))
}

/// Hessian-vector product `H v` of the summed squared-error loss at
/// `params`, computed exactly by forward-over-reverse propagation (ReLU
/// second derivatives vanish almost everywhere).
pub fn hessian_vector_product(
    params: &HeadParams,
    xs: &Array2<f64>,
    ys: &[f64],
    v: &HeadParams,
) -> Result<HeadParams> {
    check_batch(params, xs, ys)?;
    let last = params.layers.len() - 1;
    let mut hv = params.zeros_like();

    for (i, &y) in ys.iter().enumerate() {
        let trace = forward_trace(params, xs.row(i));

        // Forward tangents along direction v.
        let mut tangents: Vec<Array1<f64>> = vec![Array1::zeros(trace.activations[0].len())];
        for l in 0..last {
            let rz = v.layers[l].weights.dot(&trace.activations[l])
                + params.layers[l].weights.dot(tangents.last().unwrap())
                + &v.layers[l].bias;
            let gate = trace.pre_activations[l].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            tangents.push(rz * gate);
        }
        let r_out = v.layers[last].weights.dot(&trace.activations[last])[0]
            + params.layers[last].weights.dot(tangents.last().unwrap())[0]
            + v.layers[last].bias[0];

        let delta_out = 2.0 * (trace.output - y);
        let r_delta_out = 2.0 * r_out;

        add_outer(
            &mut hv.layers[last].weights,
            &Array1::from_elem(1, r_delta_out),
            &trace.activations[last],
            1.0,
        );
        add_outer(
            &mut hv.layers[last].weights,
            &Array1::from_elem(1, delta_out),
            &tangents[last],
            1.0,
        );
        hv.layers[last].bias[0] += r_delta_out;

        let mut upstream = params.layers[last].weights.row(0).to_owned() * delta_out;
        let mut r_upstream = v.layers[last].weights.row(0).to_owned() * delta_out
            + params.layers[last].weights.row(0).to_owned() * r_delta_out;

        for l in (0..last).rev() {
            let gate = trace.pre_activations[l].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            let delta = &upstream * &gate;
            let r_delta = &r_upstream * &gate;

            add_outer(&mut hv.layers[l].weights, &r_delta, &trace.activations[l], 1.0);
            add_outer(&mut hv.layers[l].weights, &delta, &tangents[l], 1.0);
            for (g, &d) in hv.layers[l].bias.iter_mut().zip(r_delta.iter()) {
                *g += d;
            }

            if l > 0 {
                r_upstream = v.layers[l].weights.t().dot(&delta)
                    + params.layers[l].weights.t().dot(&r_delta);
                upstream = params.layers[l].weights.t().dot(&delta);
            }
        }
    }
    Ok(hv)
}

/// Adam hyperparameters; defaults are the standard
/// `(1e-3, 0.9, 0.999, 1e-8)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    first_moment: HeadParams,
    second_moment: HeadParams,
    step: usize,
}

impl AdamState {
    pub fn new(like: &HeadParams) -> Self {
        AdamState {
            first_moment: like.zeros_like(),
            second_moment: like.zeros_like(),
            step: 0,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn update(&mut self, params: &mut HeadParams, grad: &HeadParams, hyper: &AdamHyper) {
        self.step += 1;
        let bc1 = 1.0 - hyper.beta1.powi(self.step as i32);
        let bc2 = 1.0 - hyper.beta2.powi(self.step as i32);

        for ((p, g), (m, v)) in params
            .layers
            .iter_mut()
            .zip(&grad.layers)
            .zip(self.first_moment.layers.iter_mut().zip(&mut self.second_moment.layers))
        {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
                *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
            };
            for ((pw, &gw), (mw, vw)) in p
                .weights
                .iter_mut()
                .zip(g.weights.iter())
                .zip(m.weights.iter_mut().zip(v.weights.iter_mut()))
            {
                update(pw, gw, mw, vw);
            }
            for ((pb, &gb), (mb, vb)) in p
                .bias
                .iter_mut()
                .zip(g.bias.iter())
                .zip(m.bias.iter_mut().zip(v.bias.iter_mut()))
            {
                update(pb, gb, mb, vb);
            }
        }
    }
}

/// Per-dimension z-score statistics, fitted once on training inputs and
/// frozen. Constant columns keep scale 1 so they pass through unchanged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &Array2<f64>) -> Self {
        let n = xs.nrows() as f64;
        let mut mean = Vec::with_capacity(xs.ncols());
        let mut std = Vec::with_capacity(xs.ncols());
        for col in xs.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s > 1e-12 { s } else { 1.0 });
        }
        Standardizer { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn transform(&self, xs: &Array2<f64>) -> Array2<f64> {
        let mut out = xs.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}
