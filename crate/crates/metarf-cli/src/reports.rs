//! CSV and JSON emission for run outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use metarf::eval::{AblationRow, ImportanceReport, SweepRow};
use metarf::pipeline::{PipelineConfig, RunOutcome};

pub fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("output: cannot create {}", out.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("output: cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).with_context(
        || format!("output: cannot create {}", path.display()),
    )?))
}

/// File-name tag encoding mode, split seed, and fine-tune count.
pub fn run_tag(config: &PipelineConfig) -> String {
    format!(
        "{}_seed{}_f{}",
        config.mode.as_str(),
        config.seed,
        config.finetune_count
    )
}

pub fn write_run_outputs(
    out: &Path,
    config: &PipelineConfig,
    outcome: &RunOutcome,
    train_rows: &[String],
) -> Result<Vec<PathBuf>> {
    let tag = run_tag(config);
    let mut written = Vec::new();

    let predictions = out.join(format!("predictions_{tag}.csv"));
    {
        let mut w = create(&predictions)?;
        writeln!(w, "row_id,group,y_true,y_pred,role")?;
        for p in &outcome.predictions {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.row_id,
                p.group,
                p.y_true,
                p.y_pred,
                p.role.as_str()
            )?;
        }
    }
    written.push(predictions);

    let per_group = out.join(format!("per_group_{tag}.csv"));
    {
        let mut w = create(&per_group)?;
        writeln!(w, "group,n_query,rmse,r2,unadapted_rmse")?;
        for g in &outcome.per_group {
            writeln!(
                w,
                "{},{},{},{},{}",
                g.group,
                g.n_query,
                g.rmse,
                g.r2.map_or(String::new(), |v| v.to_string()),
                g.unadapted_rmse.map_or(String::new(), |v| v.to_string()),
            )?;
        }
    }
    written.push(per_group);

    let selected = out.join(format!("train_rows_{tag}.csv"));
    {
        let mut w = create(&selected)?;
        writeln!(w, "rank,row_id")?;
        for (rank, id) in train_rows.iter().enumerate() {
            writeln!(w, "{},{}", rank + 1, id)?;
        }
    }
    written.push(selected);

    let report = out.join(format!("report_{tag}.json"));
    {
        let doc = json!({
            "mode": config.mode.as_str(),
            "seed": config.seed,
            "finetune_count": config.finetune_count,
            "metrics": outcome.metrics,
            "unadapted_metrics": outcome.unadapted_metrics,
            "top_k": outcome.top_k,
            "per_group": outcome.per_group,
        });
        serde_json::to_writer_pretty(create(&report)?, &doc)?;
    }
    written.push(report);

    Ok(written)
}

pub fn write_ablation(out: &Path, seed: u64, rows: &[AblationRow]) -> Result<Vec<PathBuf>> {
    let csv_path = out.join(format!("ablation_seed{seed}.csv"));
    {
        let mut w = create(&csv_path)?;
        writeln!(w, "method,sampling,rmse,r2,repeats")?;
        for r in rows {
            writeln!(w, "{},{},{},{},{}", r.method, r.sampling, r.rmse, r.r2, r.repeats)?;
        }
    }
    let json_path = out.join(format!("ablation_seed{seed}.json"));
    serde_json::to_writer_pretty(create(&json_path)?, rows)?;
    Ok(vec![csv_path, json_path])
}

pub fn write_sweep(out: &Path, tag: &str, rows: &[SweepRow]) -> Result<Vec<PathBuf>> {
    let csv_path = out.join(format!("sweep_{tag}.csv"));
    {
        let mut w = create(&csv_path)?;
        writeln!(
            w,
            "finetune_count,method_rmse,baseline_rmse,rmse_margin,method_r2,baseline_r2,r2_margin"
        )?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.finetune_count,
                r.method.rmse,
                r.baseline.rmse,
                r.rmse_margin,
                r.method.r2,
                r.baseline.r2,
                r.r2_margin
            )?;
        }
    }
    let json_path = out.join(format!("sweep_{tag}.json"));
    serde_json::to_writer_pretty(create(&json_path)?, rows)?;
    Ok(vec![csv_path, json_path])
}

pub fn write_importance(out: &Path, tag: &str, report: &ImportanceReport) -> Result<Vec<PathBuf>> {
    let csv_path = out.join(format!("importance_{tag}.csv"));
    {
        let mut w = create(&csv_path)?;
        writeln!(w, "feature,score")?;
        for s in &report.scores {
            writeln!(w, "{},{}", s.feature, s.score)?;
        }
    }
    let json_path = out.join(format!("importance_{tag}.json"));
    serde_json::to_writer_pretty(create(&json_path)?, report)?;
    Ok(vec![csv_path, json_path])
}
