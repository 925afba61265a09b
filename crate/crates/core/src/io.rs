//! GraphText dataset directories.
//!
//! ```text
//! meta.json      {"name", "num_nodes", "num_classes", "feature_dim", "undirected"}
//! edges.txt      "src dst" per line, 0-based ids
//! features.txt   one row of feature_dim reals per node
//! labels.txt     one class id per line
//! ```
//!
//! Blank lines are ignored. Self-loops in `edges.txt` are dropped because
//! graphs never store them.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::graph::Graph;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphMeta {
    pub name: String,
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub undirected: bool,
}

/// What the loader saw in `edges.txt` before normalization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub edge_lines: usize,
    pub self_loops_dropped: usize,
}

pub fn load_graph(dir: impl AsRef<Path>) -> Result<Graph, GraphError> {
    load_graph_with_stats(dir).map(|(g, _)| g)
}

pub fn load_graph_with_stats(dir: impl AsRef<Path>) -> Result<(Graph, LoadStats), GraphError> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let mut stats = LoadStats::default();

    let labels_path = dir.join("labels.txt");
    let mut labels = Vec::with_capacity(meta.num_nodes);
    for_each_line(&labels_path, |line_no, line| {
        let label: usize = parse_token(&labels_path, line_no, line.trim())?;
        if label >= meta.num_classes {
            return Err(GraphError::Malformed {
                path: labels_path.clone(),
                line: line_no,
                message: format!(
                    "label {label} is not below num_classes={}",
                    meta.num_classes
                ),
            });
        }
        labels.push(label);
        Ok(())
    })?;
    check_count("labels", meta.num_nodes, labels.len())?;

    let features_path = dir.join("features.txt");
    let mut data = Vec::with_capacity(meta.num_nodes * meta.feature_dim);
    let mut rows = 0;
    for_each_line(&features_path, |line_no, line| {
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(parse_token::<f64>(&features_path, line_no, tok)?);
        }
        let found = data.len() - before;
        if found != meta.feature_dim {
            return Err(GraphError::Malformed {
                path: features_path.clone(),
                line: line_no,
                message: format!("expected {} features, found {found}", meta.feature_dim),
            });
        }
        rows += 1;
        Ok(())
    })?;
    check_count("feature rows", meta.num_nodes, rows)?;
    let features = Tensor::from_vec(rows, meta.feature_dim, data)?;

    let edges_path = dir.join("edges.txt");
    let mut edges = Vec::new();
    for_each_line(&edges_path, |line_no, line| {
        let mut toks = line.split_whitespace();
        let (Some(a), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(GraphError::Malformed {
                path: edges_path.clone(),
                line: line_no,
                message: "expected `src dst`".into(),
            });
        };
        let src: usize = parse_token(&edges_path, line_no, a)?;
        let dst: usize = parse_token(&edges_path, line_no, b)?;
        if src >= meta.num_nodes || dst >= meta.num_nodes {
            return Err(GraphError::Malformed {
                path: edges_path.clone(),
                line: line_no,
                message: format!(
                    "edge ({src}, {dst}) outside 0..{} nodes",
                    meta.num_nodes
                ),
            });
        }
        stats.edge_lines += 1;
        if src == dst {
            stats.self_loops_dropped += 1;
        } else {
            edges.push((src, dst));
        }
        Ok(())
    })?;

    let graph = if meta.undirected {
        Graph::new_undirected(edges, features, labels, meta.num_classes)?
    } else {
        Graph::new(edges, features, labels, meta.num_classes)?
    };
    Ok((graph.with_name(meta.name), stats))
}

pub fn read_meta(dir: &Path) -> Result<GraphMeta, GraphError> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|source| GraphError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| GraphError::Meta { path, source })
}

/// Writes `graph` as a GraphText directory, creating `dir` if needed.
/// Every stored directed edge is written, so undirected graphs list both
/// orientations.
pub fn save_graph(graph: &Graph, dir: impl AsRef<Path>) -> Result<(), GraphError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let meta = GraphMeta {
        name: graph.name().to_string(),
        num_nodes: graph.num_nodes(),
        num_classes: graph.num_classes(),
        feature_dim: graph.feature_dim(),
        undirected: graph.is_undirected(),
    };
    let meta_text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_file(&dir.join("meta.json"), |w| writeln!(w, "{meta_text}"))?;
    write_file(&dir.join("edges.txt"), |w| {
        for (s, d) in graph.edges() {
            writeln!(w, "{s} {d}")?;
        }
        Ok(())
    })?;
    write_file(&dir.join("features.txt"), |w| {
        let f = graph.features();
        for r in 0..f.rows() {
            let row: Vec<String> = f.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    })?;
    write_file(&dir.join("labels.txt"), |w| {
        for y in graph.labels() {
            writeln!(w, "{y}")?;
        }
        Ok(())
    })
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), GraphError> {
    let io_err = |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<(), GraphError>,
) -> Result<(), GraphError> {
    let file = fs::File::open(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line)?;
    }
    Ok(())
}

fn parse_token<T: FromStr>(path: &Path, line: usize, tok: &str) -> Result<T, GraphError> {
    tok.parse().map_err(|_| GraphError::Malformed {
        path: PathBuf::from(path),
        line,
        message: format!("cannot parse `{tok}`"),
    })
}

fn check_count(what: &'static str, expected: usize, found: usize) -> Result<(), GraphError> {
    if expected == found {
        Ok(())
    } else {
        Err(GraphError::CountMismatch {
            what,
            expected,
            found,
        })
    }
}
