use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Result;
use clap::Args;
use gbk_core::analysis::serialize_extended_opt;
use gbk_core::synth::{median, sweep_csv, sweep_point, SweepRow, SweepTraining, SynthSpec};
use gbk_core::SynthError;
use serde::Serialize;
use serde_json::json;

use super::{pretty, Globals};
use crate::config::{config_error, env_seed, FloatList};
use crate::rundir::RunDir;

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub d: usize,
    /// Mixing rates P0 = P1 = p to visit.
    #[arg(long, default_value = "0.51,0.6,0.7,0.8,0.9")]
    pub p: FloatList,
    /// Graphs per mixing rate, with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Also train GCN, MLP and oracle-gated GBK on every graph.
    #[arg(long)]
    pub train: bool,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub wd: f64,
}

#[derive(Debug, Serialize)]
struct PointSummary {
    p0: f64,
    p1: f64,
    gap: f64,
    #[serde(serialize_with = "serialize_extended_opt")]
    median_c_single: Option<f64>,
    #[serde(serialize_with = "serialize_extended_opt")]
    median_c_single_self: Option<f64>,
    #[serde(serialize_with = "serialize_extended_opt")]
    median_c_oracle: Option<f64>,
    #[serde(serialize_with = "serialize_extended_opt")]
    median_c_oracle_self: Option<f64>,
    mean_gcn_test_acc: Option<f64>,
    mean_mlp_test_acc: Option<f64>,
    mean_gbk_oracle_test_acc: Option<f64>,
}

fn mean_of(rows: &[&SweepRow], get: fn(&SweepRow) -> Option<f64>) -> Option<f64> {
    let v: Option<Vec<f64>> = rows.iter().map(|r| get(r)).collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn median_of(rows: &[&SweepRow], get: fn(&SweepRow) -> f64) -> Option<f64> {
    median(&rows.iter().map(|r| get(r)).collect::<Vec<_>>())
}

/// Runs every `(point, seed)` task on up to `jobs` threads, keeping task order.
fn run_tasks(
    base: &SynthSpec,
    tasks: &[(f64, u64)],
    training: Option<&SweepTraining>,
    jobs: usize,
) -> Result<Vec<SweepRow>, SynthError> {
    let one = |&(p, seed): &(f64, u64)| sweep_point(base, p, p, seed, training);
    if jobs <= 1 {
        return tasks.iter().map(one).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SweepRow, SynthError>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let row = one(task);
                slots.lock().expect("no poisoned workers")[i] = Some(row);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

pub fn run(g: &Globals, args: &SweepArgs) -> Result<serde_json::Value> {
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    if args.p.0.is_empty() || args.seeds == 0 {
        return Err(config_error("need at least one mixing rate and one seed"));
    }
    let base = SynthSpec::with_features(args.n, args.d, 0.5, 0.5, args.feature_dim, args.sigma, seed);
    for &p in &args.p.0 {
        SynthSpec { p0: p, p1: p, ..base.clone() }
            .validate()
            .map_err(|e| config_error(e.to_string()))?;
    }
    let training = args.train.then(|| SweepTraining {
        epochs: args.epochs,
        learning_rate: args.lr,
        weight_decay: args.wd,
        ..SweepTraining::default()
    });
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    let tasks: Vec<(f64, u64)> = args
        .p
        .0
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let rows = run_tasks(&base, &tasks, training.as_ref(), g.jobs)?;

    let points: Vec<PointSummary> = args
        .p
        .0
        .iter()
        .map(|&p| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.p0 == p).collect();
            PointSummary {
                p0: p,
                p1: p,
                gap: (2.0 * p - 1.0).abs(),
                median_c_single: median_of(&group, |r| r.c_single),
                median_c_single_self: median_of(&group, |r| r.c_single_self),
                median_c_oracle: median_of(&group, |r| r.c_oracle),
                median_c_oracle_self: median_of(&group, |r| r.c_oracle_self),
                mean_gcn_test_acc: mean_of(&group, |r| r.gcn_test_acc),
                mean_mlp_test_acc: mean_of(&group, |r| r.mlp_test_acc),
                mean_gbk_oracle_test_acc: mean_of(&group, |r| r.gbk_oracle_test_acc),
            }
        })
        .collect();
    let narrow = points.iter().min_by(|a, b| a.gap.total_cmp(&b.gap));
    let wide = points.iter().max_by(|a, b| a.gap.total_cmp(&b.gap));
    let ratio = match (narrow, wide) {
        (Some(n), Some(w)) if n.gap < w.gap => n
            .median_c_single
            .zip(w.median_c_single)
            .map(|(a, b)| a / b),
        _ => None,
    };

    let mut run = RunDir::create(&g.out, "sweep-theorem1")?;
    run.write("sweep.csv", sweep_csv(&rows))?;
    run.write("points.json", pretty(&points)?)?;
    let summary = json!({
        "command": "sweep-theorem1",
        "run_dir": run.path(),
        "points": points.len(),
        "seeds": args.seeds,
        "trained": args.train,
        "complexity_ratio": ratio.filter(|r| r.is_finite()),
    });
    run.write("summary.json", pretty(&summary)?)?;
    run.finish(
        json!({ "synth": base, "p": args.p.0, "seeds": seeds, "training": training }),
        None,
        Some(seed),
    )?;
    Ok(summary)
}
