//! Command-line driver for the few-shot yield-prediction pipeline.
//!
//! Subcommands: `run`, `sample`, `ablate`, `sweep`, `importance`, `synth`.
//! Configuration is a flat key=value space (see `config.rs`); every command
//! writes `config_echo.txt` alongside its outputs, and rerunning from that
//! echo reproduces the outputs bit-for-bit.

mod config;
mod reports;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::FlatConfig;
use metarf::data::{load_descriptor_table, write_descriptor_table, DescriptorTable};
use metarf::eval::{ablation_grid, finetune_sweep, permutation_importance};
use metarf::pipeline::{fit, PipelineConfig};
use metarf::rng::derive_seed;
use metarf::sampling::{kennard_stone, select_representative_raw};
use metarf::synth::generate_table;
use metarf::tsne::tsne_embed;

#[derive(Parser)]
#[command(name = "metarf", version, about = "Few-shot reaction-yield prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Dataset CSV (overrides the `data` config key).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Root seed; all component seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Model mode: metarf | baseline | maml-only | transfer.
    #[arg(long)]
    mode: Option<String>,
    /// Fine-tune samples per test group.
    #[arg(long)]
    finetune_count: Option<usize>,
    /// Extra key=value overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one pipeline configuration.
    Run(CommonArgs),
    /// Emit a representative-sample ordering (the suggested experiment order).
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of rows to select.
        #[arg(long)]
        k: Option<usize>,
        /// Also write the 2-D embedding (row_id, z1, z2).
        #[arg(long)]
        dump_embedding: bool,
    },
    /// Run the seven-cell ablation grid.
    Ablate(CommonArgs),
    /// Sweep the number of fine-tune samples against the baseline.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated fine-tune counts (overrides `sweep.counts`).
        #[arg(long)]
        counts: Option<String>,
    },
    /// Permutation feature importance.
    Importance {
        #[command(flatten)]
        common: CommonArgs,
        /// retrain | shuffle-only (overrides `importance.mode`).
        #[arg(long)]
        importance_mode: Option<String>,
    },
    /// Generate a synthetic grouped-regression dataset.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        rows_per_group: Option<usize>,
        #[arg(long)]
        features: Option<usize>,
        /// Magnitude of the per-group slope/offset disturbances.
        #[arg(long)]
        effect: Option<f64>,
        /// Gaussian noise sigma.
        #[arg(long)]
        noise: Option<f64>,
    },
}

fn main() {
    if let Err(err) = dispatch() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch() -> Result<()> {
    match Cli::parse().command {
        Command::Run(common) => cmd_run(common),
        Command::Sample {
            common,
            k,
            dump_embedding,
        } => cmd_sample(common, k, dump_embedding),
        Command::Ablate(common) => cmd_ablate(common),
        Command::Sweep { common, counts } => cmd_sweep(common, counts),
        Command::Importance {
            common,
            importance_mode,
        } => cmd_importance(common, importance_mode),
        Command::Synth {
            common,
            groups,
            rows_per_group,
            features,
            effect,
            noise,
        } => cmd_synth(common, groups, rows_per_group, features, effect, noise),
    }
}

/// Resolve defaults -> config file -> --set -> dedicated flags, then echo.
fn resolve(common: &CommonArgs, extra: &[(&str, Option<String>)]) -> Result<FlatConfig> {
    let mut cfg = FlatConfig::defaults();
    if let Some(path) = &common.config {
        cfg.merge_file(path).context("stage: config")?;
    }
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .with_context(|| format!("--set {pair:?} is not key=value"))?;
        cfg.set(k.trim(), v.trim()).context("stage: config")?;
    }
    if let Some(data) = &common.data {
        cfg.set("data", &data.display().to_string())?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(mode) = &common.mode {
        cfg.set("mode", mode)?;
    }
    if let Some(f) = common.finetune_count {
        cfg.set("finetune.count", &f.to_string())?;
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(key, v).context("stage: config")?;
        }
    }

    reports::ensure_out_dir(&common.out)?;
    reports::write_text(&common.out.join("config_echo.txt"), &cfg.echo())?;
    Ok(cfg)
}

fn load_table(cfg: &FlatConfig) -> Result<DescriptorTable> {
    let path = cfg.data_path()?;
    load_descriptor_table(&path, &cfg.csv_schema())
        .with_context(|| format!("stage: load ({})", path.display()))
}

fn cmd_run(common: CommonArgs) -> Result<()> {
    let cfg = resolve(&common, &[])?;
    let table = load_table(&cfg)?;
    let pipeline_config: PipelineConfig = cfg.pipeline_config().context("stage: config")?;

    let fitted = fit(&table, &pipeline_config).context("stage: fit")?;
    let outcome = fitted.evaluate(&table).context("stage: evaluate")?;

    let train_row_ids: Vec<String> = fitted
        .train_rows
        .iter()
        .map(|&i| table.row_id(i).to_string())
        .collect();
    let mut written = reports::write_run_outputs(&common.out, &pipeline_config, &outcome, &train_row_ids)
        .context("stage: report")?;

    // model artifacts for later reloading
    let tag = reports::run_tag(&pipeline_config);
    if let Some(forest) = &fitted.forest {
        let path = common.out.join(format!("forest_{tag}.json"));
        forest.save_json(&path).context("stage: save model")?;
        written.push(path);
    }
    if let Some(head) = &fitted.head {
        let path = common.out.join(format!("head_{tag}.json"));
        head.save_json(&path).context("stage: save model")?;
        written.push(path);
    }

    println!(
        "run {}: test rmse {:.4}, r2 {:.4} over {} query rows",
        reports::run_tag(&pipeline_config),
        outcome.metrics.rmse,
        outcome.metrics.r2,
        outcome.metrics.n
    );
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_sample(common: CommonArgs, k: Option<usize>, dump_embedding: bool) -> Result<()> {
    let cfg = resolve(&common, &[("sample.k", k.map(|v| v.to_string()))])?;
    let table = load_table(&cfg)?;
    let k = cfg.get_usize("sample.k")?;
    let seed = cfg.get_u64("seed")?;

    let raw_space = cfg.get_bool("sample.raw_space")?;
    let (selected, embedding) = if raw_space {
        (
            select_representative_raw(table.features(), k).context("stage: select")?,
            None,
        )
    } else {
        let mut tsne = cfg.tsne_config().context("stage: config")?;
        tsne.seed = derive_seed(seed, "tsne");
        let embedding = tsne_embed(table.features(), &tsne).context("stage: embed")?;
        let selected = kennard_stone(&embedding.coords, k).context("stage: select")?;
        (selected, Some(embedding))
    };

    let selection_path = common.out.join(format!("selection_k{k}_seed{seed}.csv"));
    let mut text = String::from("rank,row_id\n");
    for (rank, &row) in selected.iter().enumerate() {
        text.push_str(&format!("{},{}\n", rank + 1, table.row_id(row)));
    }
    reports::write_text(&selection_path, &text)?;
    println!("wrote {}", selection_path.display());

    if dump_embedding {
        let embedding = embedding
            .as_ref()
            .context("--dump-embedding requires embedding-space selection")?;
        let path = common.out.join(format!("embedding_seed{seed}.csv"));
        let mut text = String::from("row_id,z1,z2\n");
        for i in 0..table.n_rows() {
            text.push_str(&format!(
                "{},{},{}\n",
                table.row_id(i),
                embedding.coords[(i, 0)],
                embedding.coords[(i, 1)]
            ));
        }
        reports::write_text(&path, &text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_ablate(common: CommonArgs) -> Result<()> {
    let cfg = resolve(&common, &[])?;
    let table = load_table(&cfg)?;
    let pipeline_config = cfg.pipeline_config().context("stage: config")?;

    let rows = ablation_grid(&table, &pipeline_config).context("stage: ablate")?;
    for r in &rows {
        println!(
            "{:<10} {:<20} rmse {:.4}  r2 {:.4}  ({} repeat{})",
            r.method,
            r.sampling,
            r.rmse,
            r.r2,
            r.repeats,
            if r.repeats == 1 { "" } else { "s" }
        );
    }
    for path in reports::write_ablation(&common.out, pipeline_config.seed, &rows)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_sweep(common: CommonArgs, counts: Option<String>) -> Result<()> {
    let cfg = resolve(&common, &[("sweep.counts", counts)])?;
    let table = load_table(&cfg)?;
    let pipeline_config = cfg.pipeline_config().context("stage: config")?;
    let counts = cfg.sweep_counts().context("stage: config")?;

    let rows = finetune_sweep(&table, &pipeline_config, &counts).context("stage: sweep")?;
    for r in &rows {
        println!(
            "f={:<3} method rmse {:.4} r2 {:.4} | baseline rmse {:.4} r2 {:.4} | margins {:.2}% / {:.2}%",
            r.finetune_count,
            r.method.rmse,
            r.method.r2,
            r.baseline.rmse,
            r.baseline.r2,
            100.0 * r.rmse_margin,
            100.0 * r.r2_margin
        );
    }
    let tag = format!("{}_seed{}", pipeline_config.mode.as_str(), pipeline_config.seed);
    for path in reports::write_sweep(&common.out, &tag, &rows)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_importance(common: CommonArgs, importance_mode: Option<String>) -> Result<()> {
    let cfg = resolve(&common, &[("importance.mode", importance_mode)])?;
    let table = load_table(&cfg)?;
    let pipeline_config = cfg.pipeline_config().context("stage: config")?;
    let mode = cfg.importance_mode().context("stage: config")?;

    let report =
        permutation_importance(&table, &pipeline_config, mode, None).context("stage: importance")?;
    println!("baseline r2 {:.4}", report.baseline_r2);
    for s in report.scores.iter().take(10) {
        println!("{:<24} {:+.4}", s.feature, s.score);
    }
    let tag = format!(
        "{}_{}_seed{}",
        pipeline_config.mode.as_str(),
        mode.as_str(),
        pipeline_config.seed
    );
    for path in reports::write_importance(&common.out, &tag, &report)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_synth(
    common: CommonArgs,
    groups: Option<usize>,
    rows_per_group: Option<usize>,
    features: Option<usize>,
    effect: Option<f64>,
    noise: Option<f64>,
) -> Result<()> {
    let cfg = resolve(
        &common,
        &[
            ("synth.groups", groups.map(|v| v.to_string())),
            ("synth.rows_per_group", rows_per_group.map(|v| v.to_string())),
            ("synth.features", features.map(|v| v.to_string())),
            ("synth.effect", effect.map(|v| v.to_string())),
            ("synth.noise", noise.map(|v| v.to_string())),
        ],
    )?;
    let spec = cfg.synth_spec().context("stage: config")?;
    let seed = cfg.get_u64("seed")?;

    let table = generate_table(&spec, seed).context("stage: generate")?;
    let path = common.out.join(format!("synthetic_seed{seed}.csv"));
    write_descriptor_table(&table, &path).context("stage: write")?;
    println!(
        "wrote {} ({} rows, {} groups, {} features)",
        path.display(),
        table.n_rows(),
        table.distinct_groups().len(),
        table.n_features()
    );
    Ok(())
}
