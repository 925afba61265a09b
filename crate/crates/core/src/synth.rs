//! Two-class synthetic graphs with controlled neighbor label distributions,
//! and the complexity / accuracy sweep over those distributions.
//!
//! Every node gets exactly `d` distinct out-neighbors. Each neighbor slot is
//! drawn from the node's own class with probability `P_y` (`p0` for class 0,
//! `p1` for class 1) and from the other class otherwise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{consistency_complexity, serialize_extended_f64};
use crate::error::SynthError;
use crate::graph::Graph;
use crate::models::{
    gcn_layer_forward, model_forward, param_name, sage_layer_forward, stack_specs, Gates,
    GraphInputs, ModelKind, ModelParams,
};
use crate::tensor::Tensor;
use crate::train::{derive_seed, oracle_gates, train_with_splits, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub p0: f64,
    pub p1: f64,
    pub sigma: f64,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub seed: u64,
}

impl SynthSpec {
    /// Means `±(2σ/√D)·𝟙`, so `‖μ0 − μ1‖ / σ = 4`.
    pub fn new(n: usize, d: usize, p0: f64, p1: f64, seed: u64) -> Self {
        Self::with_features(n, d, p0, p1, 16, 1.0, seed)
    }

    pub fn with_features(
        n: usize,
        d: usize,
        p0: f64,
        p1: f64,
        feature_dim: usize,
        sigma: f64,
        seed: u64,
    ) -> Self {
        let a = 2.0 * sigma / (feature_dim as f64).sqrt();
        Self {
            n,
            d,
            p0,
            p1,
            sigma,
            mu0: vec![a; feature_dim],
            mu1: vec![-a; feature_dim],
            seed,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Infeasible(m));
        if self.n == 0 || self.n % 2 != 0 {
            return bad(format!("n must be positive and even, got {}", self.n));
        }
        if self.d == 0 || 2 * self.d >= self.n {
            return bad(format!("need 1 <= d < n/2, got d={} n={}", self.d, self.n));
        }
        for (name, p) in [("p0", self.p0), ("p1", self.p1)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.mu0.is_empty() || self.mu0.len() != self.mu1.len() {
            return bad("mu0 and mu1 must be non-empty and equally long".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        Ok(())
    }
}

/// Directed `d`-out-regular graph with exactly balanced labels and Gaussian
/// features `N(μ_y, σ²I)`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Graph, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.n / 2;
    let mut labels: Vec<usize> = (0..spec.n).map(|i| usize::from(i >= half)).collect();
    labels.shuffle(&mut rng);
    let mut by_class: [Vec<usize>; 2] = [Vec::with_capacity(half), Vec::with_capacity(half)];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut edges = Vec::with_capacity(spec.n * spec.d);
    let mut chosen = Vec::with_capacity(spec.d);
    for (i, &y) in labels.iter().enumerate() {
        let p_same = if y == 0 { spec.p0 } else { spec.p1 };
        chosen.clear();
        while chosen.len() < spec.d {
            let class = if rng.random_bool(p_same) { y } else { 1 - y };
            let pool = &by_class[class];
            loop {
                let j = pool[rng.random_range(0..pool.len())];
                if j != i && !chosen.contains(&j) {
                    chosen.push(j);
                    break;
                }
            }
        }
        edges.extend(chosen.iter().map(|&j| (i, j)));
    }

    let dim = spec.feature_dim();
    let mut data = Vec::with_capacity(spec.n * dim);
    for &y in &labels {
        let mu = if y == 0 { &spec.mu0 } else { &spec.mu1 };
        for &m in mu {
            let z: f64 = rng.sample(StandardNormal);
            data.push(m + spec.sigma * z);
        }
    }
    let features = Tensor::from_vec(spec.n, dim, data).map_err(crate::error::GraphError::from)?;
    let name = format!(
        "synth-n{}-d{}-p{}-{}-s{}",
        spec.n, spec.d, spec.p0, spec.p1, spec.seed
    );
    Ok(Graph::new(edges, features, labels, 2)?.with_name(name))
}

/// Output of one linear aggregation layer with shared kernel `w` and no
/// activation: `mean_{N(i)} x_j W`, or `Â X W` when `self_term` is set.
pub fn single_kernel_output(
    graph: &Graph,
    w: &Tensor,
    self_term: bool,
) -> Result<Tensor, SynthError> {
    let kind = if self_term {
        ModelKind::Gcn
    } else {
        ModelKind::Sage
    };
    let specs = stack_specs(kind, w.rows(), w.cols(), 1, w.cols(), 1);
    let mut params = ModelParams::init(&specs, 0);
    if self_term {
        params.set(&param_name(0, "W"), w.clone())?;
        Ok(gcn_layer_forward(
            &params,
            0,
            &specs[0],
            graph.features(),
            &graph.normalized_adjacency(),
        )?)
    } else {
        params.set(&param_name(0, "W_f"), Tensor::zeros(w.rows(), w.cols()))?;
        params.set(&param_name(0, "W_s"), w.clone())?;
        Ok(sage_layer_forward(
            &params,
            0,
            &specs[0],
            graph.features(),
            graph.index(),
        )?)
    }
}

/// Bi-kernel layer with `W_s = I`, `W_d = −I`, zero bias, identity
/// activation and gates fixed to `𝟙(y_i = y_j)`. The self kernel is `I`
/// when `self_term` is set and zero otherwise.
pub fn oracle_bikernel_output(graph: &Graph, self_term: bool) -> Result<Tensor, SynthError> {
    let h = graph.feature_dim();
    let specs = stack_specs(ModelKind::Gbk, h, h, 1, h, 1);
    let mut params = ModelParams::init(&specs, 0);
    let identity = Tensor::identity(h);
    params.set(
        &param_name(0, "W_f"),
        if self_term {
            identity.clone()
        } else {
            Tensor::zeros(h, h)
        },
    )?;
    params.set(&param_name(0, "W_s"), identity.clone())?;
    params.set(&param_name(0, "W_d"), identity.scale(-1.0))?;
    let gates = oracle_gates(graph, &specs);
    let out = model_forward(
        &specs,
        &params,
        &GraphInputs::new(graph, None),
        Gates::Fixed(&gates),
    )?;
    Ok(out.logits)
}

/// Glorot-uniform square kernel for complexity probes.
pub fn random_kernel(dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = (6.0 / (2 * dim) as f64).sqrt();
    let data = (0..dim * dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(dim, dim, data).expect("square by construction")
}

/// Training settings of the sweep's GCN, MLP and oracle-gated GBK runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub layers: usize,
    pub split: [f64; 3],
}

impl Default for SweepTraining {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-2,
            weight_decay: 5e-4,
            hidden: 16,
            layers: 2,
            split: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub p0: f64,
    pub p1: f64,
    /// `|P0 + P1 − 1|`.
    pub gap: f64,
    pub seed: u64,
    pub homophily_ratio: f64,
    /// Shared kernel, neighbor mean only.
    #[serde(serialize_with = "serialize_extended_f64")]
    pub c_single: f64,
    /// Shared kernel with `D⁻¹(A+I)`.
    #[serde(serialize_with = "serialize_extended_f64")]
    pub c_single_self: f64,
    /// Oracle-gated bi-kernel, neighbors only.
    #[serde(serialize_with = "serialize_extended_f64")]
    pub c_oracle: f64,
    /// Oracle-gated bi-kernel plus identity self term.
    #[serde(serialize_with = "serialize_extended_f64")]
    pub c_oracle_self: f64,
    pub gcn_test_acc: Option<f64>,
    pub mlp_test_acc: Option<f64>,
    pub gbk_oracle_test_acc: Option<f64>,
}

/// For every `(p0, p1)` and seed: generate a graph, measure complexity of
/// single-kernel and oracle bi-kernel outputs over all nodes, and optionally
/// train GCN, MLP and oracle-gated GBK models.
pub fn theorem1_sweep(
    base: &SynthSpec,
    points: &[(f64, f64)],
    seeds: &[u64],
    training: Option<&SweepTraining>,
) -> Result<Vec<SweepRow>, SynthError> {
    if points.is_empty() || seeds.is_empty() {
        return Err(SynthError::EmptySweep);
    }
    let mut rows = Vec::with_capacity(points.len() * seeds.len());
    for &(p0, p1) in points {
        for &seed in seeds {
            rows.push(sweep_point(base, p0, p1, seed, training)?);
        }
    }
    Ok(rows)
}

pub fn sweep_point(
    base: &SynthSpec,
    p0: f64,
    p1: f64,
    seed: u64,
    training: Option<&SweepTraining>,
) -> Result<SweepRow, SynthError> {
    let spec = SynthSpec {
        p0,
        p1,
        seed,
        ..base.clone()
    };
    let graph = generate_synthetic(&spec)?;
    let w = random_kernel(spec.feature_dim(), derive_seed(seed, 1));
    let labels = graph.labels();
    let c = |t: &Tensor| -> Result<f64, SynthError> {
        Ok(consistency_complexity(t, labels, 2.0)?.complexity)
    };

    let mut row = SweepRow {
        p0,
        p1,
        gap: (p0 + p1 - 1.0).abs(),
        seed,
        homophily_ratio: graph.homophily_ratio()?,
        c_single: c(&single_kernel_output(&graph, &w, false)?)?,
        c_single_self: c(&single_kernel_output(&graph, &w, true)?)?,
        c_oracle: c(&oracle_bikernel_output(&graph, false)?)?,
        c_oracle_self: c(&oracle_bikernel_output(&graph, true)?)?,
        gcn_test_acc: None,
        mlp_test_acc: None,
        gbk_oracle_test_acc: None,
    };
    if let Some(t) = training {
        let run = |model: ModelKind, oracle_gate: bool| -> Result<f64, SynthError> {
            let config = TrainConfig {
                model,
                hidden: t.hidden,
                layers: t.layers,
                learning_rate: t.learning_rate,
                weight_decay: t.weight_decay,
                lambda: 0.0,
                epochs: t.epochs,
                seed,
                split: t.split,
                oracle_gate,
                ..TrainConfig::default()
            };
            Ok(train_with_splits(&graph, &config)?.0.history.test_acc)
        };
        row.gcn_test_acc = Some(run(ModelKind::Gcn, false)?);
        row.mlp_test_acc = Some(run(ModelKind::Mlp, false)?);
        row.gbk_oracle_test_acc = Some(run(ModelKind::Gbk, true)?);
    }
    Ok(row)
}

/// CSV with one line per sweep row; untrained accuracies are empty cells
/// and infinite complexities are written as `inf`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "p0,p1,gap,seed,homophily_ratio,c_single,c_single_self,c_oracle,c_oracle_self,\
         gcn_test_acc,mlp_test_acc,gbk_oracle_test_acc\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.p0,
            r.p1,
            r.gap,
            r.seed,
            r.homophily_ratio,
            r.c_single,
            r.c_single_self,
            r.c_oracle,
            r.c_oracle_self,
            opt(r.gcn_test_acc),
            opt(r.mlp_test_acc),
            opt(r.gbk_oracle_test_acc),
        ));
    }
    out
}

/// Median with infinities ordered last; `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_homophily_and_heterophily() {
        let g = generate_synthetic(&SynthSpec::new(60, 5, 1.0, 1.0, 3)).unwrap();
        assert_eq!(g.homophily_ratio().unwrap(), 1.0);
        let g = generate_synthetic(&SynthSpec::new(60, 5, 0.0, 0.0, 3)).unwrap();
        assert_eq!(g.homophily_ratio().unwrap(), 0.0);
    }

    #[test]
    fn infeasible_specs() {
        for spec in [
            SynthSpec::new(11, 2, 0.5, 0.5, 0),
            SynthSpec::new(10, 5, 0.5, 0.5, 0),
            SynthSpec::new(10, 0, 0.5, 0.5, 0),
            SynthSpec::new(10, 2, 1.5, 0.5, 0),
        ] {
            assert!(matches!(
                generate_synthetic(&spec),
                Err(SynthError::Infeasible(_))
            ));
        }
        // largest feasible degree: every same-class node but itself
        let g = generate_synthetic(&SynthSpec::new(10, 4, 1.0, 1.0, 0)).unwrap();
        assert_eq!(g.num_edges(), 40);
    }

    #[test]
    fn same_seed_same_graph() {
        let a = generate_synthetic(&SynthSpec::new(40, 3, 0.6, 0.4, 9)).unwrap();
        let b = generate_synthetic(&SynthSpec::new(40, 3, 0.6, 0.4, 9)).unwrap();
        assert_eq!(a.edges().collect::<Vec<_>>(), b.edges().collect::<Vec<_>>());
        assert_eq!(a.features(), b.features());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[f64::INFINITY, 1.0, 2.0]), Some(2.0));
    }

    #[test]
    fn empty_sweep() {
        let base = SynthSpec::new(20, 2, 0.5, 0.5, 0);
        assert!(matches!(
            theorem1_sweep(&base, &[], &[0], None),
            Err(SynthError::EmptySweep)
        ));
    }
}
