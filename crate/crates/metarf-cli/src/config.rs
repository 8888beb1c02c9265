//! Flat key=value run configuration.
//!
//! Precedence: built-in defaults, then the `--config` file, then repeated
//! `--set key=value` flags, then the dedicated flags (`--seed`, `--mode`,
//! `--finetune-count`). Every command echoes its fully resolved
//! configuration to `<out>/config_echo.txt`; that file is itself a valid
//! `--config` input and reproduces the run bit-for-bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use metarf::data::CsvSchema;
use metarf::eval::ImportanceMode;
use metarf::forest::ForestParams;
use metarf::head::AdamHyper;
use metarf::meta::MetaConfig;
use metarf::pipeline::{Mode, PipelineConfig, SamplingMethod};
use metarf::synth::SynthSpec;
use metarf::tsne::TsneConfig;

/// Every key any subcommand understands, with its default value. One global
/// registry keeps config echoes interchangeable between commands.
const KEY_DEFAULTS: &[(&str, &str)] = &[
    ("data", ""),
    ("seed", "0"),
    ("mode", "metarf"),
    ("schema.id", "id"),
    ("schema.group", "group"),
    ("schema.yield", "yield"),
    ("schema.features", ""),
    ("split.train_groups", "4"),
    ("split.val_groups", "1"),
    // comma-separated group names; non-empty lists replace the seeded split
    ("split.train_groups_names", ""),
    ("split.val_groups_names", ""),
    ("train_fraction", "1.0"),
    ("sampling", "dimension-reduction"),
    ("finetune.count", "5"),
    ("topk", "10"),
    ("forest.trees", "100"),
    ("forest.max_depth", "none"),
    ("forest.min_samples_leaf", "1"),
    ("forest.mtry", "auto"),
    ("forest.bootstrap", "true"),
    ("meta.inner_lr", "0.0001"),
    ("meta.support_size", "40"),
    ("meta.iterations", "80"),
    ("meta.batch_tasks", "4"),
    ("meta.outer_lr", "0.001"),
    ("meta.beta1", "0.9"),
    ("meta.beta2", "0.999"),
    ("meta.epsilon", "1e-8"),
    ("meta.second_order", "true"),
    ("tsne.perplexity", "30"),
    ("tsne.learning_rate", "200"),
    ("tsne.iterations", "1000"),
    ("tsne.momentum_initial", "0.5"),
    ("tsne.momentum_final", "0.8"),
    ("tsne.momentum_switch", "250"),
    ("tsne.exaggeration", "12"),
    ("tsne.exaggeration_iters", "250"),
    ("sample.k", "5"),
    ("sample.raw_space", "false"),
    ("sweep.counts", "2,4,6,8,10"),
    ("importance.mode", "retrain"),
    ("synth.groups", "30"),
    ("synth.rows_per_group", "50"),
    ("synth.features", "10"),
    ("synth.effect", "20"),
    ("synth.noise", "2"),
];

#[derive(Debug, Clone)]
pub struct FlatConfig {
    values: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn defaults() -> Self {
        FlatConfig {
            values: KEY_DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Merge a config file: one `key = value` per line, `#` comments.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config: cannot read {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').with_context(|| {
                format!("config: line {} has no '=': {raw:?}", lineno + 1)
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            bail!("config: unknown key {key:?}");
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .unwrap_or_else(|| panic!("key {key:?} missing from registry"))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)
            .parse()
            .with_context(|| format!("config: {key} = {:?} is not an integer", self.get(key)))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .parse()
            .with_context(|| format!("config: {key} = {:?} is not a count", self.get(key)))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)
            .parse()
            .with_context(|| format!("config: {key} = {:?} is not a number", self.get(key)))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => bail!("config: {key} = {other:?} is not true/false"),
        }
    }

    /// The resolved configuration in file form, reloadable via `--config`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn data_path(&self) -> Result<PathBuf> {
        let raw = self.get("data");
        if raw.is_empty() {
            bail!("config: no dataset given (set `data` or pass --data)");
        }
        Ok(PathBuf::from(raw))
    }

    pub fn csv_schema(&self) -> CsvSchema {
        let features = self.get("schema.features");
        CsvSchema {
            id_column: self.get("schema.id").to_string(),
            group_column: self.get("schema.group").to_string(),
            yield_column: self.get("schema.yield").to_string(),
            feature_columns: if features.is_empty() {
                None
            } else {
                Some(features.split(',').map(|s| s.trim().to_string()).collect())
            },
        }
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let max_depth = match self.get("forest.max_depth") {
            "none" | "unlimited" | "0" => None,
            other => Some(other.parse::<usize>().with_context(|| {
                format!("config: forest.max_depth = {other:?} is not a depth or 'none'")
            })?),
        };
        let mtry = match self.get("forest.mtry") {
            "auto" | "0" => None,
            other => Some(other.parse::<usize>().with_context(|| {
                format!("config: forest.mtry = {other:?} is not a count or 'auto'")
            })?),
        };

        let name_list = |key: &str| -> Vec<String> {
            let raw = self.get(key);
            if raw.is_empty() {
                Vec::new()
            } else {
                raw.split(',').map(|s| s.trim().to_string()).collect()
            }
        };

        Ok(PipelineConfig {
            mode: Mode::parse(self.get("mode"))?,
            n_train_groups: self.get_usize("split.train_groups")?,
            n_val_groups: self.get_usize("split.val_groups")?,
            explicit_train_groups: name_list("split.train_groups_names"),
            explicit_val_groups: name_list("split.val_groups_names"),
            train_fraction: self.get_f64("train_fraction")?,
            sampling: SamplingMethod::parse(self.get("sampling"))?,
            finetune_count: self.get_usize("finetune.count")?,
            forest: ForestParams {
                n_trees: self.get_usize("forest.trees")?,
                max_depth,
                min_samples_leaf: self.get_usize("forest.min_samples_leaf")?,
                mtry,
                bootstrap: self.get_bool("forest.bootstrap")?,
                seed: 0, // derived from the run seed inside the pipeline
            },
            meta: MetaConfig {
                inner_lr: self.get_f64("meta.inner_lr")?,
                support_size: self.get_usize("meta.support_size")?,
                meta_iterations: self.get_usize("meta.iterations")?,
                tasks_per_batch: self.get_usize("meta.batch_tasks")?,
                outer: AdamHyper {
                    learning_rate: self.get_f64("meta.outer_lr")?,
                    beta1: self.get_f64("meta.beta1")?,
                    beta2: self.get_f64("meta.beta2")?,
                    epsilon: self.get_f64("meta.epsilon")?,
                },
                second_order: self.get_bool("meta.second_order")?,
                seed: 0, // derived
            },
            tsne: self.tsne_config()?,
            top_k: self.get_usize("topk")?,
            seed: self.get_u64("seed")?,
            sampling_repeat: 0,
        })
    }

    pub fn tsne_config(&self) -> Result<TsneConfig> {
        Ok(TsneConfig {
            perplexity: self.get_f64("tsne.perplexity")?,
            output_dim: 2,
            learning_rate: self.get_f64("tsne.learning_rate")?,
            iterations: self.get_usize("tsne.iterations")?,
            momentum_initial: self.get_f64("tsne.momentum_initial")?,
            momentum_final: self.get_f64("tsne.momentum_final")?,
            momentum_switch: self.get_usize("tsne.momentum_switch")?,
            exaggeration_factor: self.get_f64("tsne.exaggeration")?,
            exaggeration_iters: self.get_usize("tsne.exaggeration_iters")?,
            seed: 0, // set by the caller from the run seed
        })
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        Ok(SynthSpec {
            n_groups: self.get_usize("synth.groups")?,
            rows_per_group: self.get_usize("synth.rows_per_group")?,
            n_features: self.get_usize("synth.features")?,
            group_effect: self.get_f64("synth.effect")?,
            noise_sigma: self.get_f64("synth.noise")?,
        })
    }

    pub fn sweep_counts(&self) -> Result<Vec<usize>> {
        self.get("sweep.counts")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .with_context(|| format!("config: sweep.counts entry {s:?} is not a count"))
            })
            .collect()
    }

    pub fn importance_mode(&self) -> Result<ImportanceMode> {
        Ok(ImportanceMode::parse(self.get("importance.mode"))?)
    }
}
