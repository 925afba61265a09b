use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use super::{pretty, read_json, Globals};
use crate::rundir::{RunDir, MANIFEST};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories to aggregate; defaults to every finished run under --out.
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Group {
    dataset_name: String,
    model: String,
    runs: usize,
    mean_test_acc: f64,
    std_test_acc: f64,
    mean_gate_acc: Option<f64>,
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

pub fn run(g: &Globals, args: &ReportArgs) -> Result<Value> {
    let dirs: Vec<PathBuf> = if args.runs.is_empty() {
        let mut found = Vec::new();
        if g.out.is_dir() {
            for entry in fs::read_dir(&g.out).with_context(|| format!("listing {}", g.out.display()))? {
                let path = entry?.path();
                if path.join(MANIFEST).is_file() && path.join("summary.json").is_file() {
                    found.push(path);
                }
            }
        }
        found.sort();
        found
    } else {
        args.runs.clone()
    };

    let mut rows = String::from("run,command,key,value\n");
    let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<Option<f64>>)> = BTreeMap::new();
    for dir in &dirs {
        let summary: Value = read_json(&dir.join("summary.json"))?;
        let command = summary["command"].as_str().unwrap_or("unknown").to_string();
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Value::Object(map) = &summary {
            for (key, value) in map {
                if key == "command" || key == "run_dir" {
                    continue;
                }
                let cells: Vec<(String, String)> = match value {
                    Value::Array(items) => items
                        .iter()
                        .enumerate()
                        .filter_map(|(i, v)| scalar(v).map(|s| (format!("{key}[{i}]"), s)))
                        .collect(),
                    other => scalar(other).map(|s| (key.clone(), s)).into_iter().collect(),
                };
                for (k, v) in cells {
                    rows.push_str(&format!(
                        "{},{},{},{}\n",
                        csv_field(&name),
                        command,
                        csv_field(&k),
                        csv_field(&v)
                    ));
                }
            }
        }
        if command == "train" {
            if let (Some(ds), Some(model), Some(acc)) = (
                summary["dataset_name"].as_str(),
                summary["model"].as_str(),
                summary["test_acc"].as_f64(),
            ) {
                let entry = groups.entry((ds.to_string(), model.to_string())).or_default();
                entry.0.push(acc);
                entry.1.push(summary["gate_acc"].as_f64());
            }
        }
    }

    let groups: Vec<Group> = groups
        .into_iter()
        .map(|((dataset_name, model), (accs, gates))| {
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let std = if accs.len() > 1 {
                (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let gates: Option<Vec<f64>> = gates.into_iter().collect();
            Group {
                dataset_name,
                model,
                runs: accs.len(),
                mean_test_acc: mean,
                std_test_acc: std,
                mean_gate_acc: gates.map(|g| g.iter().sum::<f64>() / g.len() as f64),
            }
        })
        .collect();
    let mut table = String::from("dataset,model,runs,mean_test_acc,std_test_acc,mean_gate_acc\n");
    for gr in &groups {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&gr.dataset_name),
            gr.model,
            gr.runs,
            gr.mean_test_acc,
            gr.std_test_acc,
            gr.mean_gate_acc.map_or(String::new(), |v| v.to_string())
        ));
    }

    let mut run = RunDir::create(&g.out, "report")?;
    run.write("runs.csv", rows)?;
    run.write("train_groups.csv", table)?;
    run.write("train_groups.json", pretty(&groups)?)?;
    let summary = json!({
        "command": "report",
        "run_dir": run.path(),
        "runs": dirs.len(),
        "train_groups": groups.len(),
    });
    run.write("summary.json", pretty(&summary)?)?;
    run.finish(json!({ "runs": dirs }), None, None)?;
    Ok(summary)
}
