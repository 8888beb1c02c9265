//! Meta-training and few-shot adaptation of the head.
//!
//! Meta-training minimizes `sum_i L_query(f(theta - alpha * grad
//! L_support(theta)))` over task draws: each meta-iteration samples a batch
//! of tasks, adapts a copy of the parameters by one plain gradient step per
//! task, sums the post-adaptation query losses, and applies one Adam update
//! to the initial parameters. In second-order mode the meta-gradient
//! differentiates through the inner step via an exact Hessian-vector
//! product; the first-order toggle drops that term.
//!
//! Deployment-phase fine-tuning is the identical inner step applied once to
//! the support rows of an unseen group.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{
    hessian_vector_product, loss_and_grad, AdamHyper, AdamState, HeadParams, Standardizer,
};
use crate::rng::{chacha, derive_seed};

/// Meta-training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Inner-loop learning rate (one vanilla gradient step).
    pub inner_lr: f64,
    /// Support examples per task.
    pub support_size: usize,
    /// Number of meta-batches.
    pub meta_iterations: usize,
    /// Tasks per meta-update.
    pub tasks_per_batch: usize,
    /// Outer-loop Adam hyperparameters.
    pub outer: AdamHyper,
    /// Differentiate through the inner step (exact) instead of the
    /// first-order approximation.
    pub second_order: bool,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 1e-4,
            support_size: 40,
            meta_iterations: 80,
            tasks_per_batch: 4,
            outer: AdamHyper::default(),
            second_order: true,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_lr < 0.0 || !self.inner_lr.is_finite() {
            return Err(Error::InvalidConfig("inner_lr must be finite and >= 0".into()));
        }
        if self.support_size == 0 {
            return Err(Error::InvalidConfig("support_size must be at least 1".into()));
        }
        if self.meta_iterations == 0 {
            return Err(Error::InvalidConfig("meta_iterations must be at least 1".into()));
        }
        if self.tasks_per_batch == 0 {
            return Err(Error::InvalidConfig("tasks_per_batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// One few-shot task in head-input space.
#[derive(Debug, Clone)]
pub struct MetaTask {
    pub support_x: Array2<f64>,
    pub support_y: Vec<f64>,
    pub query_x: Array2<f64>,
    pub query_y: Vec<f64>,
}

/// One vanilla gradient step on the support loss:
/// `theta - alpha * grad L(theta)`. With `alpha = 0` the parameters are
/// returned bit-identical.
pub fn inner_adapt(
    params: &HeadParams,
    support_x: &Array2<f64>,
    support_y: &[f64],
    alpha: f64,
) -> Result<HeadParams> {
    if alpha < 0.0 {
        return Err(Error::InvalidConfig("inner learning rate must be >= 0".into()));
    }
    let (loss, grad) = loss_and_grad(params, support_x, support_y)?;
    if !loss.is_finite() || !grad.all_finite() {
        return Err(Error::NonFinite {
            what: "inner-step loss or gradient".into(),
            context: "parameters are exploding; lower the learning rate".into(),
        });
    }
    let mut adapted = params.clone();
    adapted.axpy(-alpha, &grad);
    Ok(adapted)
}

/// Deployment-phase adaptation to an unseen group: exactly [`inner_adapt`]
/// applied to the group's fine-tune samples.
pub fn finetune(
    params: &HeadParams,
    support_x: &Array2<f64>,
    support_y: &[f64],
    alpha: f64,
) -> Result<HeadParams> {
    inner_adapt(params, support_x, support_y, alpha)
}

/// Meta-objective value and meta-gradient over a batch of tasks.
///
/// Per task: adapt, evaluate the query loss at the adapted parameters, and
/// accumulate `grad_query` (first order) or
/// `grad_query - alpha * H_support * grad_query` (second order). Exposed
/// separately from the training loop so gradient identities can be tested
/// ahead of the non-linear Adam update.
pub fn meta_gradient(
    params: &HeadParams,
    tasks: &[MetaTask],
    inner_lr: f64,
    second_order: bool,
) -> Result<(f64, HeadParams)> {
    if tasks.is_empty() {
        return Err(Error::invalid("meta-gradient over an empty task batch"));
    }
    let mut total_loss = 0.0;
    let mut total_grad = params.zeros_like();

    for task in tasks {
        let adapted = inner_adapt(params, &task.support_x, &task.support_y, inner_lr)?;
        let (query_loss, query_grad) = loss_and_grad(&adapted, &task.query_x, &task.query_y)?;
        total_loss += query_loss;

        if second_order && inner_lr != 0.0 {
            // d/dtheta L_q(theta - a g_s(theta)) = (I - a H_s) g_q(phi)
            let hv = hessian_vector_product(params, &task.support_x, &task.support_y, &query_grad)?;
            total_grad.axpy(1.0, &query_grad);
            total_grad.axpy(-inner_lr, &hv);
        } else {
            total_grad.axpy(1.0, &query_grad);
        }
    }
    Ok((total_loss, total_grad))
}

/// Meta-train head parameters from a task sampler.
///
/// The sampler is called with a ChaCha8 stream seeded from
/// `derive_seed(config.seed, "tasks")`; initial parameters come from
/// `derive_seed(config.seed, "init")`. Returns the meta-trained parameters.
pub fn meta_train<S>(mut sampler: S, d_in: usize, config: &MetaConfig) -> Result<HeadParams>
where
    S: FnMut(&mut ChaCha8Rng) -> Result<MetaTask>,
{
    config.validate()?;
    let mut params = HeadParams::init(d_in, derive_seed(config.seed, "init"))?;
    let mut adam = AdamState::new(&params);
    let mut task_rng = chacha(derive_seed(config.seed, "tasks"));

    for iteration in 0..config.meta_iterations {
        let tasks: Vec<MetaTask> = (0..config.tasks_per_batch)
            .map(|_| sampler(&mut task_rng))
            .collect::<Result<_>>()?;
        let (loss, grad) = meta_gradient(&params, &tasks, config.inner_lr, config.second_order)?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFinite {
                what: "meta-loss or meta-gradient".into(),
                context: format!("meta-iteration {iteration}"),
            });
        }
        adam.update(&mut params, &grad, &config.outer);
    }
    Ok(params)
}

/// Standard pretraining baseline: full-batch Adam on the mean squared error
/// of the pooled training rows, no inner loop. The result is adapted at
/// test time with [`finetune`], like the meta-trained head.
pub fn train_transfer(
    xs: &Array2<f64>,
    ys: &[f64],
    d_in: usize,
    config: &MetaConfig,
) -> Result<HeadParams> {
    config.validate()?;
    if xs.nrows() == 0 {
        return Err(Error::invalid("transfer training needs at least one row"));
    }
    let mut params = HeadParams::init(d_in, derive_seed(config.seed, "init"))?;
    let mut adam = AdamState::new(&params);
    let scale = 1.0 / xs.nrows() as f64;

    for iteration in 0..config.meta_iterations {
        let (loss, mut grad) = loss_and_grad(&params, xs, ys)?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFinite {
                what: "transfer loss or gradient".into(),
                context: format!("iteration {iteration}"),
            });
        }
        // mean-form objective
        for l in &mut grad.layers {
            l.weights.mapv_inplace(|v| v * scale);
            l.bias.mapv_inplace(|v| v * scale);
        }
        adam.update(&mut params, &grad, &config.outer);
    }
    Ok(params)
}

/// What the head needs at deployment: parameters, the input space they were
/// trained in, the frozen input and target standardization statistics, and
/// the training config.
///
/// The head trains in z-scored target space (statistics from the training
/// rows, frozen afterwards); raw-percent predictions are recovered as
/// `output * target_std + target_mean`. Support targets passed to
/// [`finetune`] at deployment go through the same frozen transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadCheckpoint {
    pub params: HeadParams,
    pub input_kind: HeadInputKind,
    pub standardizer: Standardizer,
    pub target_mean: f64,
    pub target_std: f64,
    pub config: MetaConfig,
}

impl HeadCheckpoint {
    pub fn normalize_targets(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter()
            .map(|y| (y - self.target_mean) / self.target_std)
            .collect()
    }

    pub fn denormalize_prediction(&self, out: f64) -> f64 {
        out * self.target_std + self.target_mean
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Mean and standard deviation of a target slice (population; the scale
/// falls back to 1 when the targets are constant).
pub fn target_stats(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// Which representation the head consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadInputKind {
    /// Per-tree forest outputs (length = tree count).
    TreeOutputs,
    /// Raw descriptor features (forest-free ablation).
    RawFeatures,
}
