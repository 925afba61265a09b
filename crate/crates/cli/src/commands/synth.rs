use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use gbk_core::io::save_graph;
use gbk_core::synth::{generate_synthetic, SynthSpec};
use serde_json::json;

use super::{pretty, Globals};
use crate::config::{config_error, env_seed};
use crate::rundir::{absolute, RunDir};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of nodes (even).
    #[arg(long)]
    pub n: usize,
    /// Out-degree of every node.
    #[arg(long)]
    pub d: usize,
    /// Probability that a class-0 neighbor shares its label.
    #[arg(long)]
    pub p0: f64,
    /// Probability that a class-1 neighbor shares its label.
    #[arg(long)]
    pub p1: f64,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory to create; defaults to `dataset/` in the run directory.
    #[arg(long)]
    pub dest: Option<PathBuf>,
}

pub fn run(g: &Globals, args: &SynthArgs) -> Result<serde_json::Value> {
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let spec = SynthSpec::with_features(
        args.n,
        args.d,
        args.p0,
        args.p1,
        args.feature_dim,
        args.sigma,
        seed,
    );
    spec.validate().map_err(|e| config_error(e.to_string()))?;
    if let Some(dest) = &args.dest {
        if dest.exists() && fs::read_dir(dest)?.next().is_some() {
            return Err(config_error(format!(
                "refusing to write into non-empty directory {}",
                dest.display()
            )));
        }
    }
    let graph = generate_synthetic(&spec)?;

    let mut run = RunDir::create(&g.out, "synth")?;
    let dest = match &args.dest {
        Some(d) => d.clone(),
        None => run.path().join("dataset"),
    };
    save_graph(&graph, &dest)?;
    if args.dest.is_none() {
        for f in ["meta.json", "edges.txt", "features.txt", "labels.txt"] {
            run.record(&format!("dataset/{f}"));
        }
    }
    run.write("synth_spec.json", pretty(&spec)?)?;
    let summary = json!({
        "command": "synth",
        "run_dir": run.path(),
        "dataset": absolute(&dest),
        "dataset_name": graph.name(),
        "homophily_ratio": graph.homophily_ratio().ok(),
    });
    run.write("summary.json", pretty(&summary)?)?;
    run.finish(serde_json::to_value(&spec)?, Some(&dest), Some(seed))?;
    Ok(summary)
}
