//! End-to-end orchestration: split, reduce, fit, adapt, evaluate.
//!
//! A [`FittedPipeline`] separates training from evaluation so callers can
//! re-evaluate a fitted model on perturbed inputs (permutation importance)
//! or with different fine-tune rows (sampling comparisons) without paying
//! for a refit.
//!
//! All component seeds derive from the single `seed` in [`PipelineConfig`]
//! via labeled `derive_seed` calls: `"split"`, `"reduce"`, `"tsne"`,
//! `"forest"`, `"meta"`, `"finetune"`, `"topk"`.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_explicit_split, make_group_split, DescriptorTable, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{metrics, rmse, top_k_report, Metrics, TopKReport};
use crate::forest::{fit_forest, Forest, ForestParams};
use crate::head::Standardizer;
use crate::meta::{
    finetune, meta_train, target_stats, train_transfer, HeadCheckpoint, HeadInputKind, MetaConfig,
    MetaTask,
};
use crate::rng::{chacha, derive_seed, derive_seed_indexed};
use crate::sampling::kennard_stone;
use crate::tsne::{tsne_embed, Embedding, TsneConfig};

/// Which model the pipeline trains and evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Forest + meta-trained head with per-group adaptation.
    MetaRf,
    /// Plain forest; fine-tune rows are appended to its training set.
    Baseline,
    /// Meta-trained head on raw features (no forest).
    MamlOnly,
    /// Forest + head pretrained by plain Adam, adapted at test time.
    Transfer,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::MetaRf => "metarf",
            Mode::Baseline => "baseline",
            Mode::MamlOnly => "maml-only",
            Mode::Transfer => "transfer",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "metarf" => Ok(Mode::MetaRf),
            "baseline" => Ok(Mode::Baseline),
            "maml-only" => Ok(Mode::MamlOnly),
            "transfer" => Ok(Mode::Transfer),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?} (expected metarf|baseline|maml-only|transfer)"
            ))),
        }
    }
}

/// How training-set reduction and fine-tune rows are selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingMethod {
    /// Kennard-Stone on the global 2-D t-SNE embedding.
    DimensionReduction,
    /// Seeded uniform sampling without replacement.
    Random,
}

impl SamplingMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMethod::DimensionReduction => "dimension-reduction",
            SamplingMethod::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<SamplingMethod> {
        match s {
            "dimension-reduction" => Ok(SamplingMethod::DimensionReduction),
            "random" => Ok(SamplingMethod::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown sampling method {other:?} (expected dimension-reduction|random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub n_train_groups: usize,
    pub n_val_groups: usize,
    /// Hand-picked training/validation groups. When non-empty they replace
    /// the seeded-random group split (and the counts above are ignored).
    pub explicit_train_groups: Vec<String>,
    pub explicit_val_groups: Vec<String>,
    /// Fraction of the training-group rows kept after reduction, in (0, 1].
    pub train_fraction: f64,
    pub sampling: SamplingMethod,
    /// Fine-tune rows per test group (0 disables adaptation).
    pub finetune_count: usize,
    pub forest: ForestParams,
    pub meta: MetaConfig,
    pub tsne: TsneConfig,
    pub top_k: usize,
    /// Root seed; all component seeds derive from it.
    pub seed: u64,
    /// Bump for repeated random-sampling draws (ablation repeats); leaves
    /// every other seed untouched.
    pub sampling_repeat: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::MetaRf,
            n_train_groups: 4,
            n_val_groups: 1,
            explicit_train_groups: Vec::new(),
            explicit_val_groups: Vec::new(),
            train_fraction: 1.0,
            sampling: SamplingMethod::DimensionReduction,
            finetune_count: 5,
            forest: ForestParams::default(),
            meta: MetaConfig::default(),
            tsne: TsneConfig::default(),
            top_k: 10,
            seed: 0,
            sampling_repeat: 0,
        }
    }
}

impl PipelineConfig {
    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "train_fraction must be in (0, 1]".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        Ok(())
    }

    fn resolved_forest(&self) -> ForestParams {
        ForestParams {
            seed: derive_seed(self.seed, "forest"),
            ..self.forest.clone()
        }
    }

    fn resolved_meta(&self) -> MetaConfig {
        MetaConfig {
            seed: derive_seed(self.seed, "meta"),
            ..self.meta.clone()
        }
    }

    fn resolved_tsne(&self) -> TsneConfig {
        TsneConfig {
            seed: derive_seed(self.seed, "tsne"),
            ..self.tsne.clone()
        }
    }

    fn sampling_seed(&self, label: &str) -> u64 {
        derive_seed_indexed(derive_seed(self.seed, label), self.sampling_repeat)
    }
}

/// Split membership of a row in the predictions output. Fine-tune rows are
/// the test-group rows used as adaptation support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Train,
    Val,
    Test,
    Finetune,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
            Role::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionRow {
    pub row_id: String,
    pub group: String,
    pub y_true: f64,
    pub y_pred: f64,
    pub role: Role,
}

/// Per-test-group evaluation summary.
#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub n_query: usize,
    pub rmse: f64,
    /// Undefined (None) when the group's query targets are constant.
    pub r2: Option<f64>,
    /// RMSE of the unadapted model on the same query rows; None for the
    /// baseline forest, which has no adaptation step.
    pub unadapted_rmse: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    /// Pooled over all test-group query rows.
    pub metrics: Metrics,
    /// Same pool predicted without per-group adaptation (head modes only).
    pub unadapted_metrics: Option<Metrics>,
    pub per_group: Vec<GroupReport>,
    pub top_k: TopKReport,
    pub predictions: Vec<PredictionRow>,
}

/// A trained pipeline: everything frozen at fit time.
#[derive(Debug)]
pub struct FittedPipeline {
    pub config: PipelineConfig,
    pub split: SplitSpec,
    /// Training rows after fraction reduction (selection order).
    pub train_rows: Vec<usize>,
    pub forest: Option<Forest>,
    pub head: Option<HeadCheckpoint>,
    /// Global t-SNE embedding (dimension-reduction sampling only).
    pub embedding: Option<Embedding>,
    /// Fine-tune rows per test group, in selection order.
    pub finetune_rows: BTreeMap<String, Vec<usize>>,
}

/// Fit the pipeline, selecting fine-tune rows per the configured sampling
/// method.
pub fn fit(table: &DescriptorTable, config: &PipelineConfig) -> Result<FittedPipeline> {
    fit_inner(table, config, None)
}

/// Fit with externally chosen fine-tune rows (used to hand the baseline the
/// exact rows another mode adapted on).
pub fn fit_with_finetune_rows(
    table: &DescriptorTable,
    config: &PipelineConfig,
    finetune_rows: BTreeMap<String, Vec<usize>>,
) -> Result<FittedPipeline> {
    fit_inner(table, config, Some(finetune_rows))
}

/// Fit and evaluate in one call.
pub fn run(table: &DescriptorTable, config: &PipelineConfig) -> Result<RunOutcome> {
    fit(table, config)?.evaluate(table)
}

fn fit_inner(
    table: &DescriptorTable,
    config: &PipelineConfig,
    preselected: Option<BTreeMap<String, Vec<usize>>>,
) -> Result<FittedPipeline> {
    config.validate()?;
    let split = if config.explicit_train_groups.is_empty() && config.explicit_val_groups.is_empty()
    {
        make_group_split(
            table,
            config.n_train_groups,
            config.n_val_groups,
            derive_seed(config.seed, "split"),
        )?
    } else {
        make_explicit_split(
            table,
            &config.explicit_train_groups,
            &config.explicit_val_groups,
        )?
    };

    // One global embedding serves both training reduction and per-group
    // fine-tune selection.
    let embedding = match config.sampling {
        SamplingMethod::DimensionReduction => {
            Some(tsne_embed(table.features(), &config.resolved_tsne())?)
        }
        SamplingMethod::Random => None,
    };

    let group_rows = table.group_indices();
    let mut train_pool: Vec<usize> = Vec::new();
    for g in &split.train_groups {
        train_pool.extend(group_rows.get(g).into_iter().flatten());
    }
    train_pool.sort_unstable();
    if train_pool.is_empty() {
        return Err(Error::invalid("no rows in the training groups"));
    }

    let keep = ((config.train_fraction * train_pool.len() as f64).ceil() as usize)
        .clamp(1, train_pool.len());
    let train_rows: Vec<usize> = if keep == train_pool.len() {
        train_pool.clone()
    } else {
        match (&config.sampling, &embedding) {
            (SamplingMethod::DimensionReduction, Some(embedding)) => {
                let coords = rows_of(&embedding.coords, &train_pool);
                kennard_stone(&coords, keep)?
                    .into_iter()
                    .map(|local| train_pool[local])
                    .collect()
            }
            _ => {
                let mut rng = chacha(config.sampling_seed("reduce"));
                let mut picked: Vec<usize> = index::sample(&mut rng, train_pool.len(), keep)
                    .into_iter()
                    .map(|local| train_pool[local])
                    .collect();
                picked.sort_unstable();
                picked
            }
        }
    };

    let finetune_rows = match preselected {
        Some(rows) => {
            validate_finetune_rows(table, &split, &rows)?;
            rows
        }
        None => select_finetune_rows(config, &split, &group_rows, embedding.as_ref())?,
    };

    let (forest, head) = train_mode(table, config, &split, &train_rows, &finetune_rows)?;

    Ok(FittedPipeline {
        config: config.clone(),
        split,
        train_rows,
        forest,
        head,
        embedding,
        finetune_rows,
    })
}

fn rows_of(matrix: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), matrix.ncols()));
    for (to, &from) in rows.iter().enumerate() {
        out.row_mut(to).assign(&matrix.row(from));
    }
    out
}

fn select_finetune_rows(
    config: &PipelineConfig,
    split: &SplitSpec,
    group_rows: &BTreeMap<String, Vec<usize>>,
    embedding: Option<&Embedding>,
) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut out = BTreeMap::new();
    let f = config.finetune_count;
    let mut rng = chacha(config.sampling_seed("finetune"));

    for group in &split.test_groups {
        let rows = group_rows
            .get(group)
            .ok_or_else(|| Error::invalid(format!("group {group:?} has no rows")))?;
        if f == 0 {
            out.insert(group.clone(), Vec::new());
            continue;
        }
        if rows.len() <= f {
            return Err(Error::invalid(format!(
                "test group {group:?} has {} rows; fine-tune count {f} would leave no query row",
                rows.len()
            )));
        }
        let picked: Vec<usize> = match (config.sampling, embedding) {
            (SamplingMethod::DimensionReduction, Some(embedding)) => {
                let coords = rows_of(&embedding.coords, rows);
                kennard_stone(&coords, f)?
                    .into_iter()
                    .map(|local| rows[local])
                    .collect()
            }
            _ => index::sample(&mut rng, rows.len(), f)
                .into_iter()
                .map(|local| rows[local])
                .collect(),
        };
        out.insert(group.clone(), picked);
    }
    Ok(out)
}

fn validate_finetune_rows(
    table: &DescriptorTable,
    split: &SplitSpec,
    rows: &BTreeMap<String, Vec<usize>>,
) -> Result<()> {
    for (group, indices) in rows {
        if !split.test_groups.contains(group) {
            return Err(Error::invalid(format!(
                "fine-tune rows given for non-test group {group:?}"
            )));
        }
        for &i in indices {
            if i >= table.n_rows() || table.group(i) != group {
                return Err(Error::invalid(format!(
                    "fine-tune row {i} does not belong to group {group:?}"
                )));
            }
        }
    }
    Ok(())
}

fn train_mode(
    table: &DescriptorTable,
    config: &PipelineConfig,
    split: &SplitSpec,
    train_rows: &[usize],
    finetune_rows: &BTreeMap<String, Vec<usize>>,
) -> Result<(Option<Forest>, Option<HeadCheckpoint>)> {
    let forest_params = config.resolved_forest();
    let meta_config = config.resolved_meta();

    match config.mode {
        Mode::Baseline => {
            // fine-tune rows become ordinary training rows
            let mut rows = train_rows.to_vec();
            for picked in finetune_rows.values() {
                rows.extend(picked.iter().copied());
            }
            let x = rows_of(table.features(), &rows);
            let y: Vec<f64> = rows.iter().map(|&i| table.yield_value(i)).collect();
            let forest = fit_forest(&x, &y, &forest_params)?;
            Ok((Some(forest), None))
        }
        Mode::MetaRf | Mode::Transfer => {
            let x_train = rows_of(table.features(), train_rows);
            let y_train: Vec<f64> = train_rows.iter().map(|&i| table.yield_value(i)).collect();
            let forest = fit_forest(&x_train, &y_train, &forest_params)?;

            let train_outputs = forest.tree_outputs_matrix(&x_train)?;
            let standardizer = Standardizer::fit(&train_outputs);
            let inputs = standardizer.transform(&train_outputs);
            let (target_mean, target_std) = target_stats(&y_train);
            let y_norm: Vec<f64> = y_train
                .iter()
                .map(|y| (y - target_mean) / target_std)
                .collect();

            let params = if config.mode == Mode::Transfer {
                train_transfer(&inputs, &y_norm, forest.n_trees(), &meta_config)?
            } else {
                let sampler = task_sampler(split, train_rows, table, &inputs, &y_norm, &meta_config)?;
                meta_train(sampler, forest.n_trees(), &meta_config)?
            };
            let head = HeadCheckpoint {
                params,
                input_kind: HeadInputKind::TreeOutputs,
                standardizer,
                target_mean,
                target_std,
                config: meta_config,
            };
            Ok((Some(forest), Some(head)))
        }
        Mode::MamlOnly => {
            let x_train = rows_of(table.features(), train_rows);
            let y_train: Vec<f64> = train_rows.iter().map(|&i| table.yield_value(i)).collect();
            let standardizer = Standardizer::fit(&x_train);
            let inputs = standardizer.transform(&x_train);
            let (target_mean, target_std) = target_stats(&y_train);
            let y_norm: Vec<f64> = y_train
                .iter()
                .map(|y| (y - target_mean) / target_std)
                .collect();

            let sampler = task_sampler(split, train_rows, table, &inputs, &y_norm, &meta_config)?;
            let params = meta_train(sampler, table.n_features(), &meta_config)?;
            let head = HeadCheckpoint {
                params,
                input_kind: HeadInputKind::RawFeatures,
                standardizer,
                target_mean,
                target_std,
                config: meta_config,
            };
            Ok((None, Some(head)))
        }
    }
}

/// Build a task sampler over the reduced training rows. `inputs` is aligned
/// with `train_rows` (row i of `inputs` is table row `train_rows[i]`).
/// Groups too small to leave a query row after drawing `support_size` rows
/// are excluded; it is an error if no group qualifies.
fn task_sampler<'a>(
    split: &SplitSpec,
    train_rows: &[usize],
    table: &DescriptorTable,
    inputs: &'a Array2<f64>,
    targets: &'a [f64],
    meta: &MetaConfig,
) -> Result<impl FnMut(&mut rand_chacha::ChaCha8Rng) -> Result<MetaTask> + 'a> {
    let mut per_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (local, &row) in train_rows.iter().enumerate() {
        let g = table.group(row).to_string();
        if split.train_groups.contains(&g) {
            per_group.entry(g).or_default().push(local);
        }
    }
    let k = meta.support_size;
    let eligible: Vec<Vec<usize>> = per_group
        .into_values()
        .filter(|rows| rows.len() > k)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no training group has more than support_size = {k} rows after reduction"
        )));
    }

    Ok(move |rng: &mut rand_chacha::ChaCha8Rng| -> Result<MetaTask> {
        let rows = &eligible[rng.random_range(0..eligible.len())];
        let picked = index::sample(rng, rows.len(), k);
        let mut support: Vec<usize> = picked.iter().map(|i| rows[i]).collect();
        support.sort_unstable();
        let support_set: std::collections::BTreeSet<usize> = support.iter().copied().collect();
        let query: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|r| !support_set.contains(r))
            .collect();

        Ok(MetaTask {
            support_x: rows_of(inputs, &support),
            support_y: support.iter().map(|&i| targets[i]).collect(),
            query_x: rows_of(inputs, &query),
            query_y: query.iter().map(|&i| targets[i]).collect(),
        })
    })
}

impl FittedPipeline {
    /// Evaluate on a table with the fine-tune rows chosen at fit time.
    /// The table may carry perturbed features (permutation importance); it
    /// must have the same shape and row order as the fitted one.
    pub fn evaluate(&self, table: &DescriptorTable) -> Result<RunOutcome> {
        self.evaluate_with_finetune_rows(table, &self.finetune_rows)
    }

    /// Evaluate with different fine-tune rows. Only meaningful for head
    /// modes; the baseline forest trains on its fine-tune rows, so swapping
    /// them requires a refit via [`fit_with_finetune_rows`].
    pub fn evaluate_with_finetune_rows(
        &self,
        table: &DescriptorTable,
        finetune_rows: &BTreeMap<String, Vec<usize>>,
    ) -> Result<RunOutcome> {
        if self.config.mode == Mode::Baseline && *finetune_rows != self.finetune_rows {
            return Err(Error::InvalidConfig(
                "baseline appends fine-tune rows to its training set; use fit_with_finetune_rows"
                    .into(),
            ));
        }
        validate_finetune_rows(table, &self.split, finetune_rows)?;

        // Model inputs for every row of the (possibly perturbed) table.
        let all_inputs: Option<Array2<f64>> = match (&self.head, &self.forest) {
            (Some(head), forest) => {
                let raw = match head.input_kind {
                    HeadInputKind::TreeOutputs => {
                        let forest = forest
                            .as_ref()
                            .expect("tree-output head implies a fitted forest");
                        forest.tree_outputs_matrix(table.features())?
                    }
                    HeadInputKind::RawFeatures => table.features().clone(),
                };
                Some(head.standardizer.transform(&raw))
            }
            (None, _) => None,
        };

        // Unadapted prediction for every row.
        let base_preds: Vec<f64> = match (&self.head, &self.forest) {
            (Some(head), _) => {
                let inputs = all_inputs.as_ref().expect("computed above");
                head.params
                    .forward_batch(inputs)?
                    .into_iter()
                    .map(|out| head.denormalize_prediction(out))
                    .collect()
            }
            (None, Some(forest)) => {
                let preds: Vec<Result<f64>> = crate::par::map_indexed(table.n_rows(), |i| {
                    forest.predict_mean(table.feature_row(i))
                });
                preds.into_iter().collect::<Result<Vec<f64>>>()?
            }
            (None, None) => unreachable!("fit always produces a forest or a head"),
        };

        let mut y_pred: Vec<f64> = base_preds.clone();
        let group_rows = table.group_indices();
        let mut per_group = Vec::new();

        for group in &self.split.test_groups {
            let rows = group_rows
                .get(group)
                .ok_or_else(|| Error::invalid(format!("group {group:?} has no rows")))?;
            let support = finetune_rows
                .get(group)
                .cloned()
                .unwrap_or_default();
            let support_set: std::collections::BTreeSet<usize> =
                support.iter().copied().collect();
            let query: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|r| !support_set.contains(r))
                .collect();
            if query.is_empty() {
                return Err(Error::invalid(format!(
                    "test group {group:?} has no query rows"
                )));
            }

            if let Some(head) = &self.head {
                if !support.is_empty() {
                    let inputs = all_inputs.as_ref().expect("head mode");
                    let support_x = rows_of(inputs, &support);
                    let support_raw: Vec<f64> =
                        support.iter().map(|&i| table.yield_value(i)).collect();
                    let support_y = head.normalize_targets(&support_raw);
                    let adapted =
                        finetune(&head.params, &support_x, &support_y, head.config.inner_lr)?;
                    for &i in rows {
                        y_pred[i] = head.denormalize_prediction(adapted.forward(inputs.row(i))?);
                    }
                }
            }

            let q_true: Vec<f64> = query.iter().map(|&i| table.yield_value(i)).collect();
            let q_pred: Vec<f64> = query.iter().map(|&i| y_pred[i]).collect();
            let group_rmse = rmse(&q_true, &q_pred)?;
            let group_r2 = crate::eval::r2(&q_true, &q_pred).ok();
            let unadapted_rmse = if self.head.is_some() {
                let u_pred: Vec<f64> = query.iter().map(|&i| base_preds[i]).collect();
                Some(rmse(&q_true, &u_pred)?)
            } else {
                None
            };
            per_group.push(GroupReport {
                group: group.clone(),
                n_query: query.len(),
                rmse: group_rmse,
                r2: group_r2,
                unadapted_rmse,
            });
        }

        // Pooled test-query metrics and the top-k report.
        let mut pool_ids = Vec::new();
        let mut pool_true = Vec::new();
        let mut pool_pred = Vec::new();
        let mut pool_unadapted = Vec::new();
        let mut predictions = Vec::with_capacity(table.n_rows());

        for i in 0..table.n_rows() {
            let group = table.group(i).to_string();
            let role = if self.split.train_groups.contains(&group) {
                Role::Train
            } else if self.split.val_groups.contains(&group) {
                Role::Val
            } else if finetune_rows
                .get(&group)
                .is_some_and(|rows| rows.contains(&i))
            {
                Role::Finetune
            } else {
                Role::Test
            };
            if role == Role::Test {
                pool_ids.push(table.row_id(i).to_string());
                pool_true.push(table.yield_value(i));
                pool_pred.push(y_pred[i]);
                pool_unadapted.push(base_preds[i]);
            }
            predictions.push(PredictionRow {
                row_id: table.row_id(i).to_string(),
                group,
                y_true: table.yield_value(i),
                y_pred: y_pred[i],
                role,
            });
        }

        let pooled = metrics(&pool_true, &pool_pred)?;
        let unadapted_metrics = if self.head.is_some() {
            Some(metrics(&pool_true, &pool_unadapted)?)
        } else {
            None
        };
        let k = self.config.top_k.min(pool_ids.len());
        let top_k = top_k_report(
            &pool_ids,
            &pool_true,
            &pool_pred,
            k,
            derive_seed(self.config.seed, "topk"),
        )?;

        Ok(RunOutcome {
            metrics: pooled,
            unadapted_metrics,
            per_group,
            top_k,
            predictions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_table, SynthSpec};

    fn small_table() -> DescriptorTable {
        generate_table(
            &SynthSpec {
                n_groups: 8,
                rows_per_group: 20,
                n_features: 6,
                group_effect: 15.0,
                noise_sigma: 1.0,
            },
            11,
        )
        .unwrap()
    }

    fn fast_config(mode: Mode) -> PipelineConfig {
        PipelineConfig {
            mode,
            n_train_groups: 5,
            n_val_groups: 0,
            finetune_count: 3,
            forest: ForestParams {
                n_trees: 20,
                ..ForestParams::default()
            },
            meta: MetaConfig {
                inner_lr: 0.01,
                support_size: 5,
                meta_iterations: 40,
                tasks_per_batch: 2,
                ..MetaConfig::default()
            },
            tsne: TsneConfig {
                iterations: 120,
                exaggeration_iters: 40,
                momentum_switch: 40,
                ..TsneConfig::default()
            },
            sampling: SamplingMethod::Random,
            seed: 5,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn baseline_appends_finetune_rows_to_training() {
        let table = small_table();
        let config = fast_config(Mode::Baseline);
        let fitted = fit(&table, &config).unwrap();
        let forest = fitted.forest.as_ref().unwrap();
        // 5 train groups x 20 rows + 3 test groups x 3 fine-tune rows
        assert_eq!(fitted.train_rows.len(), 100);
        let appended: usize = fitted.finetune_rows.values().map(|v| v.len()).sum();
        assert_eq!(appended, 9);
        assert!(forest.n_trees() == 20);
        let out = fitted.evaluate(&table).unwrap();
        assert!(out.unadapted_metrics.is_none());
        // every test-group row is predicted; 3 groups x 20 rows
        let test_rows = out
            .predictions
            .iter()
            .filter(|p| matches!(p.role, Role::Test | Role::Finetune))
            .count();
        assert_eq!(test_rows, 60);
        assert_eq!(out.metrics.n, 51); // 60 - 9 fine-tune rows
    }

    #[test]
    fn metarf_zero_finetune_count_uses_unadapted_head() {
        let table = small_table();
        let mut config = fast_config(Mode::MetaRf);
        config.finetune_count = 0;
        let out = run(&table, &config).unwrap();
        let unadapted = out.unadapted_metrics.unwrap();
        assert_eq!(out.metrics.rmse, unadapted.rmse);
        assert!(out.predictions.iter().all(|p| p.role != Role::Finetune));
    }

    #[test]
    fn run_is_deterministic() {
        let table = small_table();
        let config = fast_config(Mode::MetaRf);
        let a = run(&table, &config).unwrap();
        let b = run(&table, &config).unwrap();
        assert_eq!(a.metrics.rmse.to_bits(), b.metrics.rmse.to_bits());
        assert_eq!(a.metrics.r2.to_bits(), b.metrics.r2.to_bits());
        for (pa, pb) in a.predictions.iter().zip(&b.predictions) {
            assert_eq!(pa.y_pred.to_bits(), pb.y_pred.to_bits());
        }
    }

    #[test]
    fn adaptation_changes_test_predictions() {
        let table = small_table();
        let config = fast_config(Mode::MetaRf);
        let fitted = fit(&table, &config).unwrap();
        let out = fitted.evaluate(&table).unwrap();
        let unadapted = out.unadapted_metrics.unwrap();
        assert_ne!(out.metrics.rmse, unadapted.rmse);
        for g in &out.per_group {
            assert!(g.unadapted_rmse.is_some());
            assert_eq!(g.n_query, 17);
        }
    }

    #[test]
    fn evaluate_with_other_rows_rejected_for_baseline() {
        let table = small_table();
        let config = fast_config(Mode::Baseline);
        let fitted = fit(&table, &config).unwrap();
        let mut other = fitted.finetune_rows.clone();
        let (group, rows) = other.iter_mut().next().unwrap();
        let all = table.rows_in_group(group);
        // swap in a different row of the same group
        let replacement = all
            .iter()
            .find(|r| !rows.contains(r))
            .copied()
            .unwrap();
        rows[0] = replacement;
        assert!(fitted.evaluate_with_finetune_rows(&table, &other).is_err());
    }

    #[test]
    fn maml_only_has_no_forest() {
        let table = small_table();
        let config = fast_config(Mode::MamlOnly);
        let fitted = fit(&table, &config).unwrap();
        assert!(fitted.forest.is_none());
        assert!(fitted.head.is_some());
        fitted.evaluate(&table).unwrap();
    }

    #[test]
    fn transfer_trains_and_adapts() {
        let table = small_table();
        let config = fast_config(Mode::Transfer);
        let out = run(&table, &config).unwrap();
        assert!(out.unadapted_metrics.is_some());
        assert!(out.metrics.rmse.is_finite());
    }

    #[test]
    fn dimension_reduction_sampling_fits() {
        let table = small_table();
        let mut config = fast_config(Mode::MetaRf);
        config.sampling = SamplingMethod::DimensionReduction;
        config.train_fraction = 0.8;
        let fitted = fit(&table, &config).unwrap();
        assert!(fitted.embedding.is_some());
        assert_eq!(fitted.train_rows.len(), 80);
        // fine-tune rows are Kennard-Stone picks inside each test group
        for rows in fitted.finetune_rows.values() {
            assert_eq!(rows.len(), 3);
        }
        fitted.evaluate(&table).unwrap();
    }

    #[test]
    fn finetune_count_larger_than_group_errors() {
        let table = small_table();
        let mut config = fast_config(Mode::MetaRf);
        config.finetune_count = 20;
        assert!(fit(&table, &config).is_err());
    }
}
