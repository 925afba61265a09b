pub mod analyze;
pub mod eval;
pub mod grid;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gbk_core::analysis::{
    consistency_complexity, emit_report, gate_accuracy, nhr_bucket_accuracy, BucketReport,
    DatasetSummary, GateSection, Report, ReportInputs,
};
use gbk_core::io::load_graph;
use gbk_core::models::{Gates, LayerSpec};
use gbk_core::splits::{edge_targets_within, SplitMasks};
use gbk_core::train::{accuracy, oracle_gates, predict, MaskSizes, RunHistory};
use gbk_core::{Graph, ModelParams, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::resolve_data;
use crate::rundir::RunDir;

/// Global options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Globals {
    pub out: PathBuf,
    pub jobs: usize,
}

pub const CHECKPOINT: &str = "checkpoint.json";
pub const LAST_CHECKPOINT: &str = "checkpoint_last.json";
pub const SPLITS: &str = "splits.json";
pub const METRICS: &str = "metrics.json";

/// `metrics.json` as written by `train`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub config: TrainConfig,
    pub masks: MaskSizes,
    pub history: RunHistory,
}

impl MetricsFile {
    pub fn load(run: &Path) -> Result<Self> {
        read_json(&run.join(METRICS))
    }

    /// Split stored with the run, checked against the recorded mask sizes.
    pub fn splits(&self, run: &Path, graph: &Graph) -> Result<SplitMasks> {
        let masks = load_splits(run, graph)?;
        anyhow::ensure!(
            MaskSizes::of(&masks) == self.masks,
            "{} does not match the mask sizes in {}",
            run.join(SPLITS).display(),
            run.join(METRICS).display()
        );
        Ok(masks)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

/// Resolves and loads a dataset by directory or name.
pub fn open_dataset(name: &str) -> Result<(PathBuf, Graph)> {
    let dir = resolve_data(name)?;
    let graph = load_graph(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok((dir, graph))
}

pub fn load_splits(run: &Path, graph: &Graph) -> Result<SplitMasks> {
    let raw: SplitMasks = read_json(&run.join(SPLITS))?;
    SplitMasks::new(raw.train, raw.val, raw.test, graph.num_nodes())
        .with_context(|| format!("validating {}", run.join(SPLITS).display()))
}

/// Prints the one-line JSON summary a command reports on stdout.
pub fn print_summary(value: serde_json::Value) {
    println!("{value}");
}

/// Metrics of one parameter set on a graph and split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointStats {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Mean over gated layers on test-test edges.
    pub gate_acc: Option<f64>,
    /// Final hidden representations of training nodes.
    #[serde(serialize_with = "gbk_core::analysis::serialize_extended_opt")]
    pub complexity: Option<f64>,
}

pub struct Analysis {
    pub stats: CheckpointStats,
    pub buckets: BucketReport,
}

pub fn gates_for<'g>(
    config_oracle: bool,
    graph: &Graph,
    specs: &[LayerSpec],
    storage: &'g mut Vec<gbk_core::Tensor>,
) -> Gates<'g> {
    if config_oracle {
        *storage = oracle_gates(graph, specs);
        Gates::Fixed(storage)
    } else {
        Gates::Learned
    }
}

pub fn analyze_params(
    graph: &Graph,
    specs: &[LayerSpec],
    params: &ModelParams,
    masks: &SplitMasks,
    oracle_gate: bool,
) -> Result<Analysis> {
    let mut storage = Vec::new();
    let gates = gates_for(oracle_gate, graph, specs, &mut storage);
    let out = predict(specs, params, graph, gates)?;
    let labels = graph.labels();
    let predictions = out.logits.argmax_rows();
    let buckets = nhr_bucket_accuracy(graph, &predictions, &masks.test)?;
    let test_edges = edge_targets_within(graph, &masks.test);
    let gate_acc = if out.alphas.is_empty() || test_edges.is_empty() || oracle_gate {
        None
    } else {
        Some(gate_accuracy(&out.alphas, &test_edges)?)
    };
    let train_labels: Vec<usize> = masks.train.iter().map(|&i| labels[i]).collect();
    let complexity = consistency_complexity(
        &out.penultimate.gather_rows(&masks.train),
        &train_labels,
        2.0,
    )
    .ok()
    .map(|r| r.complexity);
    Ok(Analysis {
        stats: CheckpointStats {
            train_acc: accuracy(&out.logits, labels, &masks.train)?,
            val_acc: accuracy(&out.logits, labels, &masks.val)?,
            test_acc: accuracy(&out.logits, labels, &masks.test)?,
            gate_acc,
            complexity,
        },
        buckets,
    })
}

/// Writes `report.json` and `series/<metric>.csv`.
pub fn write_report(
    run: &mut RunDir,
    graph: &Graph,
    history: &RunHistory,
    analysis: &Analysis,
) -> Result<Report> {
    let dataset = DatasetSummary::of(graph);
    let gate = GateSection::new(analysis.stats.gate_acc);
    let report = emit_report(&ReportInputs {
        dataset: Some(&dataset),
        history: Some(history),
        buckets: Some(&analysis.buckets),
        gate: Some(&gate),
    })?;
    run.write("report.json", &report.document)?;
    for (name, csv) in &report.series {
        run.write(&format!("series/{name}.csv"), csv)?;
    }
    Ok(report)
}
