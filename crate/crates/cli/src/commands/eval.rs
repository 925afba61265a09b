use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use gbk_core::models::Checkpoint;
use serde_json::json;

use super::{
    analyze_params, open_dataset, pretty, Globals, MetricsFile, CHECKPOINT,
};
use crate::config::config_error;
use crate::rundir::{absolute, RunDir, RunManifest};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint to score instead of the run's best checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset override; defaults to the run's dataset.
    #[arg(long)]
    pub data: Option<String>,
}

pub fn run(g: &Globals, args: &EvalArgs) -> Result<serde_json::Value> {
    let manifest = RunManifest::load(&args.run)?;
    let data = args
        .data
        .clone()
        .or_else(|| manifest.dataset.as_ref().map(|p| p.display().to_string()))
        .ok_or_else(|| config_error("the run records no dataset; pass --data"))?;
    let (dir, graph) = open_dataset(&data)?;
    let metrics = MetricsFile::load(&args.run)?;
    let masks = metrics.splits(&args.run, &graph)?;
    let ckpt_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| args.run.join(CHECKPOINT));
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let params = ckpt
        .to_params()
        .with_context(|| format!("checkpoint {}", ckpt_path.display()))?;
    let analysis = analyze_params(&graph, &ckpt.specs, &params, &masks, metrics.config.oracle_gate)?;

    let recorded = metrics.history.test_acc;
    let stats = &analysis.stats;
    let summary = json!({
        "command": "eval",
        "checkpoint": absolute(&ckpt_path),
        "dataset_name": graph.name(),
        "model": metrics.config.model,
        "train_acc": stats.train_acc,
        "val_acc": stats.val_acc,
        "test_acc": stats.test_acc,
        "gate_acc": stats.gate_acc,
        "recorded_test_acc": recorded,
        "matches_recorded": stats.test_acc == recorded,
    });
    let mut run = RunDir::create(&g.out, "eval")?;
    let mut summary = summary;
    summary["run_dir"] = json!(run.path());
    run.write("eval.json", pretty(&analysis.stats)?)?;
    run.write("summary.json", pretty(&summary)?)?;
    run.finish(
        json!({ "run": absolute(&args.run), "checkpoint": absolute(&ckpt_path) }),
        Some(&dir),
        Some(metrics.config.seed),
    )?;
    Ok(summary)
}
