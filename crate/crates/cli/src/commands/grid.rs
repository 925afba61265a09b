use anyhow::{Context, Result};
use clap::Args;
use gbk_core::analysis::spearman;
use gbk_core::splits::make_splits;
use gbk_core::train::{grid_search, GridResult, GridSpec};
use gbk_core::TrainConfig;
use serde::Serialize;
use serde_json::json;

use super::{open_dataset, pretty, Globals};
use crate::config::{config_error, resolve_flags, FloatList, ModelFlags};
use crate::rundir::RunDir;

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub flags: ModelFlags,
    /// Learning rates to search, e.g. 1e-3,1e-4.
    #[arg(long)]
    pub lrs: Option<FloatList>,
    /// Weight decays to search.
    #[arg(long)]
    pub wds: Option<FloatList>,
    /// Gate loss weights to search.
    #[arg(long)]
    pub lambdas: Option<FloatList>,
    /// Independent splits (seeds seed, seed+1, ...) per setting.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Training fractions to sweep; validation and test share the rest equally.
    #[arg(long)]
    pub train_fractions: Option<FloatList>,
}

#[derive(Debug, Serialize)]
struct BestCell {
    seed: u64,
    index: usize,
    learning_rate: f64,
    weight_decay: f64,
    lambda: f64,
    best_epoch: usize,
    best_val_acc: f64,
    test_acc: f64,
    gate_acc: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SettingSummary {
    split: [f64; 3],
    best: Vec<BestCell>,
    mean_val_acc: f64,
    mean_test_acc: f64,
    std_test_acc: f64,
    mean_gate_acc: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GridRecord<'a> {
    split: [f64; 3],
    seed: u64,
    result: &'a GridResult,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for a single value.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn run(g: &Globals, args: &GridArgs) -> Result<serde_json::Value> {
    let resolved = resolve_flags(&args.flags)?;
    let base = resolved.train;
    let mut grid = resolved
        .grid
        .unwrap_or_else(|| GridSpec::standard(base.model));
    if let Some(FloatList(v)) = &args.lrs {
        grid.learning_rates = v.clone();
    }
    if let Some(FloatList(v)) = &args.wds {
        grid.weight_decays = v.clone();
    }
    if let Some(FloatList(v)) = &args.lambdas {
        grid.lambdas = v.clone();
    }
    if args.repeats == 0 {
        return Err(config_error("--repeats must be >= 1"));
    }
    let data = resolved
        .data
        .ok_or_else(|| config_error("no dataset given: pass --data or set `data` in the config"))?;
    let (dir, graph) = open_dataset(&data)?;

    let splits: Vec<[f64; 3]> = match &args.train_fractions {
        None => vec![base.split],
        Some(FloatList(fs)) => fs
            .iter()
            .map(|&f| {
                if f > 0.0 && f < 1.0 {
                    Ok([f, (1.0 - f) / 2.0, (1.0 - f) / 2.0])
                } else {
                    Err(config_error(format!("training fraction must lie in (0, 1), got {f}")))
                }
            })
            .collect::<Result<_>>()?,
    };

    let mut records = Vec::new();
    let mut settings = Vec::new();
    for split in &splits {
        let mut best = Vec::new();
        for r in 0..args.repeats {
            let seed = base.seed.wrapping_add(r as u64);
            let config = TrainConfig {
                seed,
                split: *split,
                ..base.clone()
            };
            let masks = make_splits(&graph, *split, seed)?;
            let result = grid_search(&graph, &config, &grid, &masks, g.jobs)?;
            let cell = result.best_cell().with_context(|| {
                format!("every grid cell failed for split {split:?}, seed {seed}")
            })?;
            let s = cell.outcome.as_ref().expect("best cell succeeded");
            best.push(BestCell {
                seed,
                index: cell.index,
                learning_rate: cell.config.learning_rate,
                weight_decay: cell.config.weight_decay,
                lambda: cell.config.lambda,
                best_epoch: s.best_epoch,
                best_val_acc: s.best_val_acc,
                test_acc: s.test_acc,
                gate_acc: s.gate_acc,
            });
            records.push((*split, seed, result));
        }
        let tests: Vec<f64> = best.iter().map(|b| b.test_acc).collect();
        let vals: Vec<f64> = best.iter().map(|b| b.best_val_acc).collect();
        let gates: Option<Vec<f64>> = best.iter().map(|b| b.gate_acc).collect();
        settings.push(SettingSummary {
            split: *split,
            mean_val_acc: mean(&vals),
            mean_test_acc: mean(&tests),
            std_test_acc: std_dev(&tests),
            mean_gate_acc: gates.map(|v| mean(&v)),
            best,
        });
    }
    let trend = (settings.len() > 1).then(|| {
        let fractions: Vec<f64> = settings.iter().map(|s| s.split[0]).collect();
        let accs: Vec<f64> = settings.iter().map(|s| s.mean_test_acc).collect();
        spearman(&fractions, &accs)
    });

    let mut run = RunDir::create(&g.out, "grid")?;
    let grid_records: Vec<GridRecord> = records
        .iter()
        .map(|(split, seed, result)| GridRecord {
            split: *split,
            seed: *seed,
            result,
        })
        .collect();
    run.write("grid.json", pretty(&grid_records)?)?;
    run.write("settings.json", pretty(&settings)?)?;
    let mut csv = String::from(
        "train_frac,val_frac,test_frac,seed,cell,learning_rate,weight_decay,lambda,best_epoch,best_val_acc,test_acc,gate_acc\n",
    );
    for s in &settings {
        for b in &s.best {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                s.split[0],
                s.split[1],
                s.split[2],
                b.seed,
                b.index,
                b.learning_rate,
                b.weight_decay,
                b.lambda,
                b.best_epoch,
                b.best_val_acc,
                b.test_acc,
                b.gate_acc.map_or(String::new(), |v| v.to_string()),
            ));
        }
    }
    run.write("best_cells.csv", csv)?;

    let summary = json!({
        "command": "grid",
        "run_dir": run.path(),
        "dataset_name": graph.name(),
        "model": base.model,
        "cells": grid.cells(&base).len(),
        "repeats": args.repeats,
        "train_fractions": settings.iter().map(|s| s.split[0]).collect::<Vec<_>>(),
        "mean_test_acc": settings.iter().map(|s| s.mean_test_acc).collect::<Vec<_>>(),
        "std_test_acc": settings.iter().map(|s| s.std_test_acc).collect::<Vec<_>>(),
        "mean_gate_acc": settings.iter().map(|s| s.mean_gate_acc).collect::<Vec<_>>(),
        "spearman_train_fraction": trend.flatten(),
    });
    run.write("summary.json", pretty(&summary)?)?;
    run.finish(
        json!({ "base": base, "grid": grid, "repeats": args.repeats, "splits": splits }),
        Some(&dir),
        Some(base.seed),
    )?;
    Ok(summary)
}
