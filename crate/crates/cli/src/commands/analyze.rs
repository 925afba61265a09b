use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use gbk_core::analysis::{nhr_bucket, DatasetSummary, NUM_BUCKETS};
use gbk_core::models::Checkpoint;
use gbk_core::Graph;
use serde::Serialize;
use serde_json::json;

use super::{
    analyze_params, open_dataset, pretty, write_report, Globals, MetricsFile,
    CHECKPOINT,
};
use crate::config::config_error;
use crate::rundir::{RunDir, RunManifest};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Dataset to describe; defaults to the dataset of --run.
    #[arg(long)]
    pub data: Option<String>,
    /// `train` run whose checkpoint to analyze.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint to analyze instead of the run's best checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct NhrBin {
    lower: f64,
    upper: f64,
    nodes: usize,
}

#[derive(Debug, Serialize)]
struct DatasetReport {
    summary: DatasetSummary,
    /// Node homophily ratios of all nodes with neighbors.
    nhr_histogram: Vec<NhrBin>,
    isolated_nodes: usize,
    /// Share of non-isolated nodes with ratio in [0.2, 0.8).
    mixed_fraction: Option<f64>,
}

fn describe(graph: &Graph) -> DatasetReport {
    let mut counts = [0usize; NUM_BUCKETS];
    let mut isolated = 0;
    for i in 0..graph.num_nodes() {
        let (same, degree) = graph.homophily_counts(i);
        if degree == 0 {
            isolated += 1;
        } else {
            counts[nhr_bucket(same, degree)] += 1;
        }
    }
    let with_neighbors: usize = counts.iter().sum();
    let mixed: usize = counts[1..NUM_BUCKETS - 1].iter().sum();
    DatasetReport {
        summary: DatasetSummary::of(graph),
        nhr_histogram: counts
            .iter()
            .enumerate()
            .map(|(b, &nodes)| NhrBin {
                lower: b as f64 / NUM_BUCKETS as f64,
                upper: (b + 1) as f64 / NUM_BUCKETS as f64,
                nodes,
            })
            .collect(),
        isolated_nodes: isolated,
        mixed_fraction: (with_neighbors > 0).then(|| mixed as f64 / with_neighbors as f64),
    }
}

pub fn run(g: &Globals, args: &AnalyzeArgs) -> Result<serde_json::Value> {
    let manifest = args.run.as_deref().map(RunManifest::load).transpose()?;
    let data = args
        .data
        .clone()
        .or_else(|| {
            manifest
                .as_ref()
                .and_then(|m| m.dataset.as_ref())
                .map(|p| p.display().to_string())
        })
        .ok_or_else(|| config_error("nothing to analyze: pass --data and/or --run"))?;
    if args.checkpoint.is_some() && args.run.is_none() {
        return Err(config_error("--checkpoint needs --run for the split and history"));
    }
    let (dir, graph) = open_dataset(&data)?;
    let description = describe(&graph);

    let mut run = RunDir::create(&g.out, "analyze")?;
    run.write("dataset.json", pretty(&description)?)?;
    let mut summary = json!({
        "command": "analyze",
        "run_dir": run.path(),
        "dataset_name": graph.name(),
        "num_nodes": graph.num_nodes(),
        "num_directed_edges": graph.num_edges(),
        "homophily_ratio": description.summary.homophily_ratio,
        "mixed_fraction": description.mixed_fraction,
    });

    if let Some(source) = &args.run {
        let metrics = MetricsFile::load(source)?;
        let masks = metrics.splits(source, &graph)?;
        let ckpt_path = args
            .checkpoint
            .clone()
            .unwrap_or_else(|| source.join(CHECKPOINT));
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let params = ckpt
            .to_params()
            .with_context(|| format!("checkpoint {}", ckpt_path.display()))?;
        let analysis =
            analyze_params(&graph, &ckpt.specs, &params, &masks, metrics.config.oracle_gate)?;
        write_report(&mut run, &graph, &metrics.history, &analysis)?;
        run.write("analysis.json", pretty(&analysis.stats)?)?;
        summary["model"] = json!(metrics.config.model);
        summary["test_acc"] = json!(analysis.stats.test_acc);
        summary["gate_acc"] = json!(analysis.stats.gate_acc);
        summary["bucket_accuracy"] = json!(analysis
            .buckets
            .buckets
            .iter()
            .map(|b| b.accuracy)
            .collect::<Vec<_>>());
    }
    run.write("summary.json", pretty(&summary)?)?;
    run.finish(
        json!({ "data": data, "run": args.run, "checkpoint": args.checkpoint }),
        Some(&dir),
        None,
    )?;
    Ok(summary)
}
