//! Representation complexity, homophily-bucket accuracy, gate accuracy and
//! run reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::AnalysisError;
use crate::graph::Graph;
use crate::splits::GateTarget;
use crate::tensor::Tensor;
use crate::train::RunHistory;

/// Separations below this make the complexity infinite.
pub const MIN_SEPARATION: f64 = 1e-12;

/// Serializes non-finite values as the strings `"inf"`, `"-inf"`, `"nan"`.
pub fn serialize_extended_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn serialize_extended_opt<S: Serializer>(
    v: &Option<f64>,
    s: S,
) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => serialize_extended_f64(x, s),
        None => s.serialize_none(),
    }
}

/// Reads numbers or the strings written by [`serialize_extended_f64`].
pub fn deserialize_extended_f64<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Extended {
        Number(f64),
        Text(String),
    }
    match Extended::deserialize(d)? {
        Extended::Number(v) => Ok(v),
        Extended::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
        },
    }
}

pub fn deserialize_extended_opt<'de, D: Deserializer<'de>>(
    d: D,
) -> Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    struct Wrapped(#[serde(deserialize_with = "deserialize_extended_f64")] f64);
    Ok(Option::<Wrapped>::deserialize(d)?.map(|w| w.0))
}

fn serialize_accuracy<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("N/A"),
    }
}

/// Davies-Bouldin style consistency of class-labelled representations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub p: f64,
    /// Within-class scatter `S_i`.
    pub scatter: Vec<f64>,
    /// Centroid separations `M_ij`, symmetric with zero diagonal.
    pub separation: Vec<Vec<f64>>,
    /// `+∞` when two centroids coincide.
    #[serde(serialize_with = "serialize_extended_f64")]
    pub complexity: f64,
}

/// `C = (1/k) Σ_i max_{j≠i} (S_i + S_j) / M_ij` where
/// `S_i = (mean_{o ∈ class i} ‖o − μ_i‖_p^p)^{1/p}` and `M_ij = ‖μ_i − μ_j‖_p`.
///
/// The class count is `max(label) + 1`; every class below it must occur.
pub fn consistency_complexity(
    reps: &Tensor,
    labels: &[usize],
    p: f64,
) -> Result<ComplexityReport, AnalysisError> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(AnalysisError::InvalidNorm(p));
    }
    if reps.rows() != labels.len() {
        return Err(AnalysisError::LengthMismatch {
            reps: reps.rows(),
            labels: labels.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(AnalysisError::SingleClass(k));
    }
    let h = reps.cols();
    let mut counts = vec![0usize; k];
    let mut centroids = Tensor::zeros(k, h);
    for (r, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for (c, v) in centroids.row_mut(y).iter_mut().zip(reps.row(r)) {
            *c += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(AnalysisError::EmptyClass(empty));
    }
    for (y, &count) in counts.iter().enumerate() {
        for c in centroids.row_mut(y) {
            *c /= count as f64;
        }
    }

    let mut scatter = vec![0.0; k];
    for (r, &y) in labels.iter().enumerate() {
        scatter[y] += p_power_distance(reps.row(r), centroids.row(y), p);
    }
    for (s, &count) in scatter.iter_mut().zip(&counts) {
        *s = (*s / count as f64).powf(1.0 / p);
    }

    let mut separation = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let m = p_power_distance(centroids.row(i), centroids.row(j), p).powf(1.0 / p);
            separation[i][j] = m;
            separation[j][i] = m;
        }
    }

    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in (0..k).filter(|&j| j != i) {
            let m = separation[i][j];
            if m < MIN_SEPARATION {
                worst = f64::INFINITY;
                break;
            }
            worst = worst.max((scatter[i] + scatter[j]) / m);
        }
        total += worst;
    }
    Ok(ComplexityReport {
        p,
        scatter,
        separation,
        complexity: total / k as f64,
    })
}

fn p_power_distance(a: &[f64], b: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum()
    }
}

pub const NUM_BUCKETS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub correct: usize,
    /// `None` (written as `"N/A"`) for empty buckets.
    #[serde(serialize_with = "serialize_accuracy")]
    pub accuracy: Option<f64>,
}

/// Test accuracy grouped by node homophily ratio into
/// `[0,0.2), [0.2,0.4), [0.4,0.6), [0.6,0.8), [0.8,1]`.
/// Nodes without neighbors have no ratio and are left out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketReport {
    pub buckets: Vec<Bucket>,
    pub isolated_skipped: usize,
}

/// Bucket of a node with `same` same-label neighbors out of `degree`.
/// Integer arithmetic keeps the boundaries exact.
pub fn nhr_bucket(same: usize, degree: usize) -> usize {
    ((NUM_BUCKETS * same) / degree).min(NUM_BUCKETS - 1)
}

pub fn nhr_bucket_accuracy(
    graph: &Graph,
    predictions: &[usize],
    test_mask: &[usize],
) -> Result<BucketReport, AnalysisError> {
    let mut counts = [0usize; NUM_BUCKETS];
    let mut correct = [0usize; NUM_BUCKETS];
    let mut isolated = 0;
    for &i in test_mask {
        let pred = *predictions
            .get(i)
            .ok_or(AnalysisError::MissingPrediction(i))?;
        let (same, degree) = graph.homophily_counts(i);
        if degree == 0 {
            isolated += 1;
            continue;
        }
        let b = nhr_bucket(same, degree);
        counts[b] += 1;
        if pred == graph.labels()[i] {
            correct[b] += 1;
        }
    }
    let buckets = (0..NUM_BUCKETS)
        .map(|b| Bucket {
            lower: b as f64 / NUM_BUCKETS as f64,
            upper: (b + 1) as f64 / NUM_BUCKETS as f64,
            count: counts[b],
            correct: correct[b],
            accuracy: (counts[b] > 0).then(|| correct[b] as f64 / counts[b] as f64),
        })
        .collect();
    Ok(BucketReport {
        buckets,
        isolated_skipped: isolated,
    })
}

/// Fraction of evaluation edges whose gate agrees with label equality,
/// with `α > 0.5` predicting "same" (exactly 0.5 predicts "different").
/// `alphas` holds one full `edges × 1` column per gated layer; the result
/// is the mean of the per-layer accuracies.
pub fn gate_accuracy(alphas: &[Tensor], edges: &[GateTarget]) -> Result<f64, AnalysisError> {
    if edges.is_empty() {
        return Err(AnalysisError::NoGateEdges);
    }
    if alphas.is_empty() {
        return Err(AnalysisError::MissingInput("gate values"));
    }
    let per_layer: f64 = alphas
        .iter()
        .map(|alpha| {
            let hits = edges
                .iter()
                .filter(|t| (alpha.data()[t.edge] > 0.5) == t.same)
                .count();
            hits as f64 / edges.len() as f64
        })
        .sum();
    Ok(per_layer / alphas.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub num_nodes: usize,
    /// Stored directed edges.
    pub num_directed_edges: usize,
    /// Unordered node pairs with at least one stored direction.
    pub num_node_pairs: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub undirected: bool,
    pub homophily_ratio: Option<f64>,
}

impl DatasetSummary {
    pub fn of(graph: &Graph) -> Self {
        let pairs = graph
            .edges()
            .filter(|&(s, d)| s < d || graph.neighbors(d).binary_search(&s).is_err())
            .count();
        Self {
            name: graph.name().to_string(),
            num_nodes: graph.num_nodes(),
            num_directed_edges: graph.num_edges(),
            num_node_pairs: pairs,
            num_features: graph.feature_dim(),
            num_classes: graph.num_classes(),
            undirected: graph.is_undirected(),
            homophily_ratio: graph.homophily_ratio().ok(),
        }
    }
}

/// Gate section: a value for gated models, `"N/A"` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateSection {
    #[serde(serialize_with = "serialize_accuracy")]
    pub accuracy: Option<f64>,
    pub evaluation_edges: String,
    pub threshold_rule: String,
}

impl GateSection {
    pub fn new(accuracy: Option<f64>) -> Self {
        Self {
            accuracy,
            evaluation_edges: "stored directed edges with both endpoints in the test mask"
                .into(),
            threshold_rule: "alpha > 0.5 predicts same label; alpha == 0.5 predicts different"
                .into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub dataset: Option<&'a DatasetSummary>,
    pub history: Option<&'a RunHistory>,
    pub buckets: Option<&'a BucketReport>,
    pub gate: Option<&'a GateSection>,
}

#[derive(Debug, Clone, Serialize)]
struct TrainingSection<'a> {
    best_epoch: usize,
    best_val_acc: f64,
    test_acc: f64,
    final_val_acc: f64,
    final_test_acc: f64,
    epochs: usize,
    history: &'a RunHistory,
}

#[derive(Debug, Clone, Serialize)]
struct ComplexitySection {
    representation: &'static str,
    p: f64,
    trajectory: Vec<ComplexityPoint>,
}

#[derive(Debug, Clone, Serialize)]
struct ComplexityPoint {
    epoch: usize,
    #[serde(serialize_with = "serialize_extended_opt")]
    value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ReportDocument<'a> {
    dataset: &'a DatasetSummary,
    training: TrainingSection<'a>,
    buckets: &'a BucketReport,
    gate: &'a GateSection,
    complexity: ComplexitySection,
}

/// A report document plus per-metric `epoch,value` CSV series.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub document: String,
    pub series: BTreeMap<String, String>,
}

/// Assembles the five report sections. Every input is required; the gate
/// section of an ungated model carries `"N/A"`.
pub fn emit_report(inputs: &ReportInputs<'_>) -> Result<Report, AnalysisError> {
    let dataset = inputs.dataset.ok_or(AnalysisError::MissingInput("dataset"))?;
    let history = inputs.history.ok_or(AnalysisError::MissingInput("history"))?;
    let buckets = inputs.buckets.ok_or(AnalysisError::MissingInput("buckets"))?;
    let gate = inputs.gate.ok_or(AnalysisError::MissingInput("gate"))?;

    let doc = ReportDocument {
        dataset,
        training: TrainingSection {
            best_epoch: history.best_epoch,
            best_val_acc: history.best_val_acc,
            test_acc: history.test_acc,
            final_val_acc: history.final_val_acc,
            final_test_acc: history.final_test_acc,
            epochs: history.records.len(),
            history,
        },
        buckets,
        gate,
        complexity: ComplexitySection {
            representation: "final hidden layer, training nodes",
            p: 2.0,
            trajectory: history
                .records
                .iter()
                .map(|r| ComplexityPoint {
                    epoch: r.epoch,
                    value: r.complexity,
                })
                .collect(),
        },
    };
    let document = serde_json::to_string_pretty(&doc).expect("report serializes");

    let mut series = BTreeMap::new();
    let columns: [(&str, fn(&crate::train::EpochRecord) -> Option<f64>); 7] = [
        ("train_loss", |r| Some(r.train_loss)),
        ("gate_loss", |r| r.gate_loss),
        ("val_loss", |r| Some(r.val_loss)),
        ("train_acc", |r| Some(r.train_acc)),
        ("val_acc", |r| Some(r.val_acc)),
        ("gate_acc_val", |r| r.gate_acc),
        ("complexity", |r| r.complexity),
    ];
    for (name, get) in columns {
        let mut csv = String::from("epoch,value\n");
        for r in &history.records {
            if let Some(v) = get(r) {
                csv.push_str(&format!("{},{}\n", r.epoch, v));
            }
        }
        series.insert(name.to_string(), csv);
    }
    Ok(Report { document, series })
}

/// Spearman rank correlation with average ranks for ties; `None` when the
/// lengths differ, fewer than two points are given, or a side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0 + 1.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}
