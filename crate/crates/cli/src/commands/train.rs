use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use gbk_core::models::Checkpoint;
use gbk_core::splits::make_splits;
use gbk_core::train::{metrics_json, train_model};
use gbk_core::TrainConfig;
use serde_json::json;

use super::{analyze_params, open_dataset, pretty, write_report, Globals, CHECKPOINT, LAST_CHECKPOINT, SPLITS};
use crate::config::{config_error, env_seed, resolve, FileConfig, ModelFlags};
use crate::rundir::{RunDir, RunManifest};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: ModelFlags,
    /// Manifest (or run directory) of an earlier `train` run to repeat;
    /// flags still override its settings.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(g: &Globals, args: &TrainArgs) -> Result<serde_json::Value> {
    let file = match &args.flags.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let (base, explicit_seed, manifest_data) = match &args.manifest {
        Some(path) => {
            let m = RunManifest::load(path)?;
            if m.command != "train" {
                return Err(config_error(format!(
                    "manifest {} belongs to `{}`, not `train`",
                    path.display(),
                    m.command
                )));
            }
            let config: TrainConfig = serde_json::from_value(m.config)
                .with_context(|| format!("reading settings from {}", path.display()))?;
            (config, true, m.dataset)
        }
        None => (TrainConfig::default(), false, None),
    };
    let resolved = resolve(base, explicit_seed, file, &args.flags, env_seed()?)?;
    let data = resolved
        .data
        .or_else(|| manifest_data.map(|p| p.display().to_string()))
        .ok_or_else(|| config_error("no dataset given: pass --data or set `data` in the config"))?;
    let (dir, graph) = open_dataset(&data)?;
    let config = resolved.train;

    let masks = make_splits(&graph, config.split, config.seed)?;
    let trained = train_model(&graph, &config, &masks)
        .with_context(|| format!("training {} on {}", config.model, graph.name()))?;
    let history = &trained.history;

    let mut run = RunDir::create(&g.out, "train")?;
    run.write(SPLITS, pretty(&masks)?)?;
    run.write(
        CHECKPOINT,
        Checkpoint::new(&trained.specs, config.seed, &trained.best).to_json(),
    )?;
    run.write(
        LAST_CHECKPOINT,
        Checkpoint::new(&trained.specs, config.seed, &trained.last).to_json(),
    )?;
    run.write(super::METRICS, metrics_json(&config, &masks, history))?;
    let analysis = analyze_params(&graph, &trained.specs, &trained.best, &masks, config.oracle_gate)?;
    write_report(&mut run, &graph, history, &analysis)?;
    run.write("analysis.json", pretty(&analysis.stats)?)?;

    let summary = json!({
        "command": "train",
        "run_dir": run.path(),
        "dataset_name": graph.name(),
        "model": config.model,
        "seed": config.seed,
        "best_epoch": history.best_epoch,
        "best_val_acc": history.best_val_acc,
        "test_acc": history.test_acc,
        "gate_acc": history.gate_acc,
        "final_test_acc": history.final_test_acc,
    });
    run.write("summary.json", pretty(&summary)?)?;
    run.finish(serde_json::to_value(&config)?, Some(&dir), Some(config.seed))?;
    Ok(summary)
}
