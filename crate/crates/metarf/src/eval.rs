//! Metrics, top-k yield selection, the ablation grid, fine-tune-count
//! sweeps, and permutation feature importance.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index;
use serde::Serialize;

use crate::data::DescriptorTable;
use crate::error::{Error, Result};
use crate::pipeline::{
    fit, fit_with_finetune_rows, run, Mode, PipelineConfig, SamplingMethod,
};
use crate::rng::{chacha, derive_seed, derive_seed_indexed, shuffle, SplitMix64};

/// Root mean square error.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::invalid("rmse of an empty set"));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt())
}

/// Coefficient of determination `1 - SS_res / SS_tot` about the mean of
/// `y_true`. Undefined (an error) when `y_true` is constant.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() < 2 {
        return Err(Error::invalid("r2 needs at least 2 observations"));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("r2 undefined for constant targets"));
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    Ok(Metrics {
        rmse: rmse(y_true, y_pred)?,
        r2: r2(y_true, y_pred)?,
        n: y_true.len(),
    })
}

/// Mean and population standard deviation of a yield selection.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SelectionStats {
    pub mean: f64,
    pub std: f64,
}

fn selection_stats(values: &[f64]) -> SelectionStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    SelectionStats {
        mean,
        std: var.sqrt(),
    }
}

/// True-yield statistics of the k rows predicted highest, next to the ideal
/// selection (k truly highest) and a seeded random comparator.
#[derive(Debug, Clone, Serialize)]
pub struct TopKReport {
    pub k: usize,
    /// Row ids of the method's picks, highest predicted first.
    pub selected_row_ids: Vec<String>,
    pub method: SelectionStats,
    pub ideal: SelectionStats,
    /// Pooled over 100 seeded draws of k rows each.
    pub random: SelectionStats,
}

/// Rank the candidate pool by predicted yield and report the true yields of
/// the top `k`. Prediction ties resolve to the lexicographically lowest row
/// id. The random comparator pools the true yields of 100 seeded k-row
/// draws; its mean/std describe that pooled sample.
pub fn top_k_report(
    row_ids: &[String],
    y_true: &[f64],
    y_pred: &[f64],
    k: usize,
    seed: u64,
) -> Result<TopKReport> {
    let n = row_ids.len();
    if n != y_true.len() || n != y_pred.len() {
        return Err(Error::invalid("top-k inputs must have equal lengths"));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} outside 1..={n}")));
    }

    let ranked_by = |key: &[f64]| -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            key[b]
                .total_cmp(&key[a])
                .then_with(|| row_ids[a].cmp(&row_ids[b]))
        });
        order
    };

    let by_pred = ranked_by(y_pred);
    let method_rows = &by_pred[..k];
    let method_yields: Vec<f64> = method_rows.iter().map(|&i| y_true[i]).collect();

    let by_true = ranked_by(y_true);
    let ideal_yields: Vec<f64> = by_true[..k].iter().map(|&i| y_true[i]).collect();

    let mut rng = chacha(seed);
    let mut pooled = Vec::with_capacity(100 * k);
    for _ in 0..100 {
        for i in index::sample(&mut rng, n, k) {
            pooled.push(y_true[i]);
        }
    }

    Ok(TopKReport {
        k,
        selected_row_ids: method_rows.iter().map(|&i| row_ids[i].clone()).collect(),
        method: selection_stats(&method_yields),
        ideal: selection_stats(&ideal_yields),
        random: selection_stats(&pooled),
    })
}

/// One fine-tune-count sweep point: the configured mode against the
/// baseline forest trained with the *same* fine-tune rows appended.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub finetune_count: usize,
    pub method: Metrics,
    pub baseline: Metrics,
    /// `(baseline_rmse - method_rmse) / baseline_rmse`
    pub rmse_margin: f64,
    /// `(method_r2 - baseline_r2) / baseline_r2`
    pub r2_margin: f64,
}

/// Sweep the number of fine-tune samples. For each count the method
/// pipeline runs first; the baseline is then refit with exactly the rows the
/// method adapted on appended to its training set, so both see the same
/// data.
pub fn finetune_sweep(
    table: &DescriptorTable,
    config: &PipelineConfig,
    counts: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        let mut method_cfg = config.clone();
        method_cfg.finetune_count = count;
        let fitted = fit(table, &method_cfg)?;
        let method_out = fitted.evaluate(table)?;

        let mut baseline_cfg = method_cfg.clone();
        baseline_cfg.mode = Mode::Baseline;
        let baseline_out =
            fit_with_finetune_rows(table, &baseline_cfg, fitted.finetune_rows.clone())?
                .evaluate(table)?;

        let m = method_out.metrics;
        let b = baseline_out.metrics;
        rows.push(SweepRow {
            finetune_count: count,
            method: m,
            baseline: b,
            rmse_margin: (b.rmse - m.rmse) / b.rmse,
            r2_margin: (m.r2 - b.r2) / b.r2,
        });
    }
    Ok(rows)
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub method: String,
    pub sampling: String,
    pub rmse: f64,
    pub r2: f64,
    /// Number of averaged repeats (random-sampling cells run 10).
    pub repeats: usize,
}

const ABLATION_RANDOM_REPEATS: u64 = 10;

/// The seven-cell ablation: the baseline forest, then
/// {metarf, maml-only, transfer} × {dimension-reduction, random} sampling.
/// Random-sampling cells are averaged over 10 seeded repeats that re-draw
/// the sampling decisions (training reduction and fine-tune selection)
/// while every other seed stays fixed.
pub fn ablation_grid(table: &DescriptorTable, config: &PipelineConfig) -> Result<Vec<AblationRow>> {
    let cells: [(Mode, SamplingMethod); 7] = [
        (Mode::Baseline, SamplingMethod::Random),
        (Mode::MetaRf, SamplingMethod::DimensionReduction),
        (Mode::MetaRf, SamplingMethod::Random),
        (Mode::MamlOnly, SamplingMethod::DimensionReduction),
        (Mode::MamlOnly, SamplingMethod::Random),
        (Mode::Transfer, SamplingMethod::DimensionReduction),
        (Mode::Transfer, SamplingMethod::Random),
    ];

    let mut out = Vec::with_capacity(cells.len());
    for (mode, sampling) in cells {
        let repeats = match sampling {
            SamplingMethod::Random => ABLATION_RANDOM_REPEATS,
            SamplingMethod::DimensionReduction => 1,
        };
        let mut rmse_sum = 0.0;
        let mut r2_sum = 0.0;
        for repeat in 0..repeats {
            let mut cell = config.clone();
            cell.mode = mode;
            cell.sampling = sampling;
            cell.sampling_repeat = repeat;
            let outcome = run(table, &cell)?;
            rmse_sum += outcome.metrics.rmse;
            r2_sum += outcome.metrics.r2;
        }
        out.push(AblationRow {
            method: mode.as_str().to_string(),
            sampling: sampling.as_str().to_string(),
            rmse: rmse_sum / repeats as f64,
            r2: r2_sum / repeats as f64,
            repeats: repeats as usize,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ImportanceMode {
    /// Refit the whole pipeline on the shuffled table (default).
    Retrain,
    /// Re-evaluate the fitted pipeline on the shuffled table.
    ShuffleOnly,
}

impl ImportanceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImportanceMode::Retrain => "retrain",
            ImportanceMode::ShuffleOnly => "shuffle-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "retrain" => Ok(ImportanceMode::Retrain),
            "shuffle-only" => Ok(ImportanceMode::ShuffleOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown importance mode {other:?} (expected retrain|shuffle-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureScore {
    pub feature: String,
    /// Baseline R² minus the R² with this feature (or feature group)
    /// shuffled.
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImportanceReport {
    pub mode: ImportanceMode,
    pub baseline_r2: f64,
    /// Scores sorted descending.
    pub scores: Vec<FeatureScore>,
}

/// Permutation feature importance: shuffle one feature column (or one named
/// group of columns together, sharing a single permutation), re-evaluate,
/// and report the drop in test R². Columns default to singleton groups in
/// table order.
pub fn permutation_importance(
    table: &DescriptorTable,
    config: &PipelineConfig,
    mode: ImportanceMode,
    feature_groups: Option<&[(String, Vec<String>)]>,
) -> Result<ImportanceReport> {
    let name_to_col: BTreeMap<&str, usize> = table
        .feature_names()
        .iter()
        .enumerate()
        .map(|(j, n)| (n.as_str(), j))
        .collect();

    let groups: Vec<(String, Vec<usize>)> = match feature_groups {
        Some(gs) => gs
            .iter()
            .map(|(label, names)| {
                let cols = names
                    .iter()
                    .map(|n| {
                        name_to_col.get(n.as_str()).copied().ok_or_else(|| {
                            Error::invalid(format!("unknown feature name {n:?}"))
                        })
                    })
                    .collect::<Result<Vec<usize>>>()?;
                Ok((label.clone(), cols))
            })
            .collect::<Result<_>>()?,
        None => table
            .feature_names()
            .iter()
            .enumerate()
            .map(|(j, n)| (n.clone(), vec![j]))
            .collect(),
    };

    let fitted = fit(table, config)?;
    let baseline_r2 = fitted.evaluate(table)?.metrics.r2;
    let perm_root = derive_seed(config.seed, "perm");

    let mut scores = Vec::with_capacity(groups.len());
    for (g, (label, cols)) in groups.iter().enumerate() {
        let mut order: Vec<usize> = (0..table.n_rows()).collect();
        let mut rng = SplitMix64::new(derive_seed_indexed(perm_root, g as u64));
        shuffle(&mut order, &mut rng);

        let mut features: Array2<f64> = table.features().clone();
        for &col in cols {
            for (to, &from) in order.iter().enumerate() {
                features[(to, col)] = table.features()[(from, col)];
            }
        }
        let shuffled = table.with_features(features)?;

        let perturbed_r2 = match mode {
            ImportanceMode::Retrain => run(&shuffled, config)?.metrics.r2,
            ImportanceMode::ShuffleOnly => fitted.evaluate(&shuffled)?.metrics.r2,
        };
        scores.push(FeatureScore {
            feature: label.clone(),
            score: baseline_r2 - perturbed_r2,
        });
    }
    scores.sort_by(|a, b| b.score.total_cmp(&a.score));

    Ok(ImportanceReport {
        mode,
        baseline_r2,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::ForestParams;
    use crate::meta::MetaConfig;
    use crate::synth::{generate_table, SynthSpec};
    use ndarray::Array2;

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let v = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((v - 12.5_f64.sqrt()).abs() < 1e-10);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn r2_cases() {
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        let v = r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-10);
        // predicting the mean scores exactly zero
        let y = [4.0, 7.0, 10.0];
        let mean = y.iter().sum::<f64>() / 3.0;
        assert_eq!(r2(&y, &[mean, mean, mean]).unwrap(), 0.0);
        assert!(r2(&[5.0, 5.0], &[1.0, 2.0]).is_err());
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i:03}")).collect()
    }

    #[test]
    fn top_k_perfect_predictions_match_ideal() {
        let y: Vec<f64> = vec![10.0, 90.0, 50.0, 70.0, 20.0];
        let report = top_k_report(&ids(5), &y, &y.clone(), 2, 0).unwrap();
        assert_eq!(report.method.mean, report.ideal.mean);
        assert_eq!(report.method.std, report.ideal.std);
        assert_eq!(report.selected_row_ids, vec!["r001", "r003"]);
    }

    #[test]
    fn top_k_constant_predictions_use_id_tie_rule() {
        let y = vec![10.0, 90.0, 50.0];
        let pred = vec![5.0, 5.0, 5.0];
        let report = top_k_report(&ids(3), &y, &pred, 2, 0).unwrap();
        assert_eq!(report.selected_row_ids, vec!["r000", "r001"]);
    }

    #[test]
    fn top_k_ideal_dominates_method_and_is_deterministic() {
        let mut rng = chacha(9);
        use rand::Rng;
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..100.0)).collect();
        let pred: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..100.0)).collect();
        let a = top_k_report(&ids(30), &y, &pred, 10, 4).unwrap();
        let b = top_k_report(&ids(30), &y, &pred, 10, 4).unwrap();
        assert!(a.ideal.mean >= a.method.mean);
        assert_eq!(a.random.mean.to_bits(), b.random.mean.to_bits());
        assert!(top_k_report(&ids(30), &y, &pred, 31, 4).is_err());
    }

    fn sweep_table() -> DescriptorTable {
        generate_table(
            &SynthSpec {
                n_groups: 6,
                rows_per_group: 16,
                n_features: 5,
                group_effect: 12.0,
                noise_sigma: 1.0,
            },
            3,
        )
        .unwrap()
    }

    fn sweep_config() -> PipelineConfig {
        PipelineConfig {
            mode: Mode::Baseline,
            n_train_groups: 4,
            n_val_groups: 0,
            sampling: SamplingMethod::Random,
            finetune_count: 3,
            forest: ForestParams {
                n_trees: 15,
                ..ForestParams::default()
            },
            meta: MetaConfig {
                support_size: 4,
                meta_iterations: 10,
                tasks_per_batch: 2,
                ..MetaConfig::default()
            },
            seed: 8,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn sweep_self_comparison_has_zero_margins() {
        let table = sweep_table();
        let config = sweep_config(); // mode = Baseline: method IS the baseline
        let rows = finetune_sweep(&table, &config, &[2, 3]).unwrap();
        for row in rows {
            assert_eq!(row.rmse_margin, 0.0, "count {}", row.finetune_count);
            assert_eq!(row.r2_margin, 0.0);
            assert_eq!(row.method.rmse.to_bits(), row.baseline.rmse.to_bits());
        }
    }

    #[test]
    fn importance_shuffle_only_scores_constant_feature_zero() {
        // feature 5 is constant everywhere: shuffling it is a no-op
        let base = sweep_table();
        let mut features = base.features().clone();
        let p = features.ncols();
        for v in features.column_mut(p - 1).iter_mut() {
            *v = 0.5;
        }
        let table = base.with_features(features).unwrap();

        let mut config = sweep_config();
        config.mode = Mode::MetaRf;
        let report =
            permutation_importance(&table, &config, ImportanceMode::ShuffleOnly, None).unwrap();
        let score = report
            .scores
            .iter()
            .find(|s| s.feature == "x5")
            .unwrap()
            .score;
        assert_eq!(score, 0.0);
    }

    #[test]
    fn importance_unused_feature_scores_exactly_zero() {
        // Feature constant on training-group rows but varying on test rows:
        // no tree can split on it, so shuffle-only importance is exactly 0.
        let base = generate_table(
            &SynthSpec {
                n_groups: 5,
                rows_per_group: 14,
                n_features: 5,
                group_effect: 10.0,
                noise_sigma: 0.5,
            },
            13,
        )
        .unwrap();
        let mut config = sweep_config();
        config.mode = Mode::MetaRf;
        config.n_train_groups = 3;
        config.finetune_count = 3;

        // Freeze feature x5 on the training groups under this config's split.
        let split = crate::data::make_group_split(
            &base,
            config.n_train_groups,
            config.n_val_groups,
            derive_seed(config.seed, "split"),
        )
        .unwrap();
        let mut features = base.features().clone();
        let p = features.ncols();
        for i in 0..base.n_rows() {
            if split.train_groups.contains(base.group(i)) {
                features[(i, p - 1)] = 0.25;
            }
        }
        let table = base.with_features(features).unwrap();

        let fitted = fit(&table, &config).unwrap();
        let forest = fitted.forest.as_ref().unwrap();
        assert!(
            forest.trees().iter().all(|t| !t.used_features().contains(&(p - 1))),
            "frozen feature must not be split on"
        );

        let report =
            permutation_importance(&table, &config, ImportanceMode::ShuffleOnly, None).unwrap();
        let score = report
            .scores
            .iter()
            .find(|s| s.feature == "x5")
            .unwrap()
            .score;
        assert_eq!(score, 0.0);
    }

    #[test]
    fn importance_finds_the_signal_feature() {
        // y depends (almost) only on x1 through the base response? No:
        // build an explicit single-signal table instead.
        let mut rng = chacha(40);
        use rand::Rng;
        let n_groups = 4;
        let rows = 15;
        let n = n_groups * rows;
        let mut ids = Vec::new();
        let mut groups = Vec::new();
        let mut yields = Vec::new();
        let features = Array2::from_shape_fn((n, 4), |_| rng.random_range(0.0..1.0));
        for g in 0..n_groups {
            for r in 0..rows {
                let i = g * rows + r;
                ids.push(format!("r{i:03}"));
                groups.push(format!("g{g}"));
                yields.push((80.0_f64 * features[(i, 0)] + 10.0).clamp(0.0, 100.0));
            }
        }
        let table = DescriptorTable::new(
            ids,
            groups,
            features,
            yields,
            (1..=4).map(|j| format!("x{j}")).collect(),
        )
        .unwrap();

        let mut config = sweep_config();
        config.mode = Mode::Baseline;
        config.n_train_groups = 2;
        config.n_val_groups = 0;
        config.finetune_count = 2;
        config.forest.mtry = Some(4);
        let report =
            permutation_importance(&table, &config, ImportanceMode::Retrain, None).unwrap();
        assert_eq!(report.scores[0].feature, "x1");
        assert!(report.scores[0].score > 0.0);

        // grouped shuffling: x1 grouped with x2 still ranks first
        let grouped = vec![
            ("signal".to_string(), vec!["x1".to_string(), "x2".to_string()]),
            ("noise".to_string(), vec!["x3".to_string(), "x4".to_string()]),
        ];
        let report = permutation_importance(
            &table,
            &config,
            ImportanceMode::ShuffleOnly,
            Some(&grouped),
        )
        .unwrap();
        assert_eq!(report.scores[0].feature, "signal");
        let unknown = vec![("bad".to_string(), vec!["nope".to_string()])];
        assert!(permutation_importance(
            &table,
            &config,
            ImportanceMode::ShuffleOnly,
            Some(&unknown)
        )
        .is_err());
    }
}
