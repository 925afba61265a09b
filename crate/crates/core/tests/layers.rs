use gbk_core::models::{
    gate_scores, gbk_layer_forward, gcn_layer_forward, model_forward, param_name,
    sage_layer_forward, stack_specs, Activation, Gates, GraphInputs, LayerSpec, ModelKind,
    ModelParams,
};
use gbk_core::synth::{generate_synthetic, oracle_bikernel_output, single_kernel_output, SynthSpec};
use gbk_core::{Graph, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Graph {
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random_bool(0.4) {
                edges.push((s, d));
            }
        }
    }
    let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
    Graph::new(edges, random_tensor(rng, n, dim), labels, 2).unwrap()
}

/// Sets every parameter (biases included) to uniform random values.
fn randomize(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let (r, c) = params.get(&name).unwrap().shape();
        params.set(&name, random_tensor(rng, r, c)).unwrap();
    }
}

fn path_fixture(activation: Activation) -> (Graph, LayerSpec, ModelParams) {
    let g = Graph::new_undirected(
        vec![(0, 1), (1, 2)],
        t(&[&[1.0, 0.5], &[-1.0, 2.0], &[0.25, -0.75]]),
        vec![0, 1, 0],
        2,
    )
    .unwrap();
    let mut spec = stack_specs(ModelKind::Gbk, 2, 2, 1, 2, 2).remove(0);
    spec.activation = activation;
    let mut p = ModelParams::init(std::slice::from_ref(&spec), 0);
    for (s, v) in [
        ("W_f", t(&[&[0.1, -0.2], &[0.3, 0.05]])),
        ("W_s", t(&[&[0.5, 0.1], &[-0.4, 0.2]])),
        ("W_d", t(&[&[-0.3, 0.6], &[0.2, -0.1]])),
        ("b", t(&[&[0.01, -0.02]])),
        ("W_g1", t(&[&[0.2, -0.1], &[0.4, 0.3], &[-0.5, 0.2], &[0.1, 0.6]])),
        ("b_g1", t(&[&[0.05, -0.05]])),
        ("W_g2", t(&[&[0.7], &[-0.9]])),
        ("b_g2", t(&[&[0.1]])),
    ] {
        p.set(&param_name(0, s), v).unwrap();
    }
    (g, spec, p)
}

// Reference values from a separate dense evaluation of the layer equation
// with a literal [z_i ‖ z_j] concatenation, edges (0,1), (1,0), (1,2), (2,1).
const PATH_ALPHA: [f64; 4] = [
    0.5012499973958399,
    0.3110960820230454,
    0.5473576181430894,
    0.45512110762641994,
];
const PATH_PRE: [[f64; 2]; 3] = [
    [-0.04249999479167977, -0.4436250028645762],
    [0.5531652464022654, 0.5172706024709264],
    [-0.4002422152528399, -0.40686678161093814],
];

#[test]
fn gbk_path_matches_reference_values() {
    let (g, spec, p) = path_fixture(Activation::Identity);
    let (out, alpha) = gbk_layer_forward(&p, 0, &spec, g.features(), g.index()).unwrap();
    for (a, want) in alpha.data().iter().zip(PATH_ALPHA) {
        assert!((a - want).abs() < 1e-14, "{a} vs {want}");
    }
    for (r, row) in PATH_PRE.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            assert!((out.get(r, c) - want).abs() < 1e-14);
        }
    }

    let (g, spec, p) = path_fixture(Activation::Relu);
    let (out, _) = gbk_layer_forward(&p, 0, &spec, g.features(), g.index()).unwrap();
    assert_eq!(out.row(0), &[0.0, 0.0]);
    assert_eq!(out.row(2), &[0.0, 0.0]);
    assert!((out.get(1, 0) - PATH_PRE[1][0]).abs() < 1e-14);
}

/// Gate scores computed with an explicit concatenated row per edge.
fn concat_gate_reference(p: &ModelParams, z: &Tensor, g: &Graph) -> Vec<f64> {
    let w1 = p.get("layer0.W_g1").unwrap();
    let b1 = p.get("layer0.b_g1").unwrap();
    let w2 = p.get("layer0.W_g2").unwrap();
    let b2 = p.get("layer0.b_g2").unwrap().item();
    g.edges()
        .map(|(i, j)| {
            let cat: Vec<f64> = z.row(i).iter().chain(z.row(j)).copied().collect();
            let mut s = b2;
            for u in 0..w1.cols() {
                let mut h = b1.get(0, u);
                for (k, x) in cat.iter().enumerate() {
                    h += x * w1.get(k, u);
                }
                s += h.max(0.0) * w2.get(u, 0);
            }
            1.0 / (1.0 + (-s).exp())
        })
        .collect()
}

#[test]
fn split_gate_projection_equals_concatenation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let g = random_graph(&mut rng, 7, 4);
        let spec = stack_specs(ModelKind::Gbk, 4, 3, 1, 3, 6).remove(0);
        let mut p = ModelParams::init(std::slice::from_ref(&spec), 1);
        randomize(&mut p, &mut rng);
        let alpha = gate_scores(&p, 0, &spec, g.features(), g.index()).unwrap();
        for (a, want) in alpha.data().iter().zip(concat_gate_reference(&p, g.features(), &g)) {
            assert!((a - want).abs() < 1e-14);
        }
    }
}

#[test]
fn gcn_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g = Graph::new_undirected(
        vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 3)],
        random_tensor(&mut rng, 5, 3),
        vec![0, 1, 0, 1, 1],
        2,
    )
    .unwrap();
    let spec = stack_specs(ModelKind::Gcn, 3, 2, 1, 2, 1).remove(0);
    let mut p = ModelParams::init(std::slice::from_ref(&spec), 0);
    randomize(&mut p, &mut rng);
    let out = gcn_layer_forward(&p, 0, &spec, g.features(), &g.normalized_adjacency()).unwrap();

    let adj = [[0, 1, 0, 1, 0], [1, 0, 1, 0, 0], [0, 1, 0, 1, 0], [1, 0, 1, 0, 1], [0, 0, 0, 1, 0]];
    let w = p.get("layer0.W").unwrap();
    let b = p.get("layer0.b").unwrap();
    for i in 0..5 {
        let members: Vec<usize> = (0..5).filter(|&j| j == i || adj[i][j] == 1).collect();
        for c in 0..2 {
            let mut acc = 0.0;
            for &j in &members {
                for k in 0..3 {
                    acc += g.features().get(j, k) * w.get(k, c);
                }
            }
            let want = acc / members.len() as f64 + b.get(0, c);
            assert!((out.get(i, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn mlp_ignores_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_graph(&mut rng, 8, 3);
    let bare = Graph::new(vec![], g.features().clone(), g.labels().to_vec(), 2).unwrap();
    let specs = stack_specs(ModelKind::Mlp, 3, 5, 2, 2, 1);
    let p = ModelParams::init(&specs, 4);
    let a = model_forward(&specs, &p, &GraphInputs::new(&g, None), Gates::Learned).unwrap();
    let b = model_forward(&specs, &p, &GraphInputs::new(&bare, None), Gates::Learned).unwrap();
    assert_eq!(a.logits, b.logits);
    assert!(a.alphas.is_empty());
}

#[test]
fn init_mean_is_centered() {
    let specs = stack_specs(ModelKind::Mlp, 100, 100, 2, 100, 1);
    let mut sum = 0.0;
    let mut count = 0usize;
    for seed in 0..20 {
        let w = ModelParams::init(&specs, seed).get("layer0.W").unwrap().clone();
        sum += w.sum();
        count += w.len();
    }
    let bound = (6.0f64 / 200.0).sqrt();
    let std_err = bound / (3.0 * count as f64).sqrt();
    assert!((sum / count as f64).abs() < 3.0 * std_err);
}

#[test]
fn oracle_gate_separates_when_shared_kernel_does_not() {
    for (p0, p1) in [(0.5, 0.5), (0.7, 0.3)] {
        let g = generate_synthetic(&SynthSpec::new(1000, 20, p0, p1, 3)).unwrap();
        let sep = |out: &Tensor| {
            let mut mu = [vec![0.0; out.cols()], vec![0.0; out.cols()]];
            for (i, &y) in g.labels().iter().enumerate() {
                for (m, v) in mu[y].iter_mut().zip(out.row(i)) {
                    *m += v / 500.0;
                }
            }
            mu[0].iter().zip(&mu[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let oracle = sep(&oracle_bikernel_output(&g, false).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shared = sep(&single_kernel_output(&g, &random_tensor(&mut rng, 16, 16), false).unwrap());
        assert!(oracle > 3.0, "oracle separation {oracle}");
        assert!(shared < 0.1 * oracle, "shared {shared} vs oracle {oracle}");
    }
}

fn permuted(g: &Graph, perm: &[usize]) -> Graph {
    let n = g.num_nodes();
    let mut features = Tensor::zeros(n, g.feature_dim());
    let mut labels = vec![0; n];
    for i in 0..n {
        features.row_mut(perm[i]).copy_from_slice(g.features().row(i));
        labels[perm[i]] = g.labels()[i];
    }
    let edges = g.edges().map(|(s, d)| (perm[s], perm[d])).collect();
    Graph::new(edges, features, labels, g.num_classes()).unwrap()
}

fn layer_outputs(kind: ModelKind, g: &Graph, p: &ModelParams, spec: &LayerSpec) -> Tensor {
    match kind {
        ModelKind::Gcn => gcn_layer_forward(p, 0, spec, g.features(), &g.normalized_adjacency()),
        ModelKind::Sage => sage_layer_forward(p, 0, spec, g.features(), g.index()),
        _ => gbk_layer_forward(p, 0, spec, g.features(), g.index()).map(|r| r.0),
    }
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn layers_are_permutation_equivariant(seed in any::<u64>(), n in 2usize..9, which in 0usize..3) {
        let kind = [ModelKind::Gcn, ModelKind::Sage, ModelKind::Gbk][which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let spec = stack_specs(kind, 3, 4, 1, 4, 5).remove(0);
        let mut p = ModelParams::init(std::slice::from_ref(&spec), seed);
        randomize(&mut p, &mut rng);
        let base = layer_outputs(kind, &g, &p, &spec);
        let moved = layer_outputs(kind, &permuted(&g, &perm), &p, &spec);
        for i in 0..n {
            for c in 0..4 {
                prop_assert!((base.get(i, c) - moved.get(perm[i], c)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tied_kernels_make_gbk_independent_of_gate(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 3);
        let specs = stack_specs(ModelKind::Gbk, 3, 4, 2, 2, 5);
        let mut p = ModelParams::init(&specs, seed);
        randomize(&mut p, &mut rng);
        for l in 0..2 {
            let ws = p.get(&param_name(l, "W_s")).unwrap().clone();
            p.set(&param_name(l, "W_d"), ws).unwrap();
        }
        let before = model_forward(&specs, &p, &GraphInputs::new(&g, None), Gates::Learned).unwrap();
        let mut q = p.clone();
        for l in 0..2 {
            for s in ["W_g1", "b_g1", "W_g2", "b_g2"] {
                let name = param_name(l, s);
                let (r, c) = q.get(&name).unwrap().shape();
                q.set(&name, random_tensor(&mut rng, r, c).scale(10.0)).unwrap();
            }
        }
        let after = model_forward(&specs, &q, &GraphInputs::new(&g, None), Gates::Learned).unwrap();
        prop_assert_eq!(before.logits, after.logits);
    }

    #[test]
    fn gates_are_open_interval_and_forwards_finite(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, 3);
        let specs = stack_specs(ModelKind::Gbk, 3, 4, 2, 2, 5);
        let mut p = ModelParams::init(&specs, seed);
        randomize(&mut p, &mut rng);
        let out = model_forward(&specs, &p, &GraphInputs::new(&g, None), Gates::Learned).unwrap();
        prop_assert!(out.logits.is_finite());
        for a in &out.alphas {
            prop_assert!(a.data().iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }
}
