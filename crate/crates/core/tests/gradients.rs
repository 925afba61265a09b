use gbk_core::autodiff::{finite_difference_check, NamedTensors, ParamVars, Tape, Var};
use gbk_core::models::{
    forward_on_tape, is_bias, stack_specs, Gates, GraphInputs, ModelKind, ModelParams,
};
use gbk_core::splits::edge_targets_within;
use gbk_core::train::{loss_on_tape, GateSupervision};
use gbk_core::{AutodiffError, Graph, Tensor, TrainError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;
const STEP: f64 = 1e-6;
const SEEDS: u64 = 20;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// 4 to 8 nodes, 3 classes, 3 features, at least one edge.
fn random_graph(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4 + (seed as usize % 5);
    let mut edges = vec![(0, 1)];
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random_bool(0.35) {
                edges.push((s, d));
            }
        }
    }
    let labels = (0..n).map(|_| rng.random_range(0..3)).collect();
    let features = random_tensor(&mut rng, n, 3);
    Graph::new(edges, features, labels, 3).unwrap()
}

/// `Σ R ⊙ x` for a fixed random `R`, reducing any tensor to a scalar.
fn weighted_sum<'a>(tape: &mut Tape<'a>, x: Var, seed: u64) -> Result<Var, AutodiffError> {
    let (r, c) = tape.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let weights = tape.constant(random_tensor(&mut rng, r, c));
    let left = tape.constant(Tensor::filled(1, r, 1.0));
    let right = tape.constant(Tensor::filled(c, 1, 1.0));
    let y = tape.mul(x, weights)?;
    let y = tape.matmul(left, y)?;
    tape.matmul(y, right)
}

fn named(pairs: Vec<(&str, Tensor)>) -> NamedTensors {
    pairs.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn assert_primitive<'a, F>(label: &str, params: NamedTensors, build: F)
where
    F: Fn(&mut Tape<'a>, &ParamVars) -> Result<Var, AutodiffError>,
{
    let check = finite_difference_check(&params, STEP, build).unwrap();
    assert!(check.max_rel_error < TOL, "{label}: {check:?}");
}

#[test]
fn primitive_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, 3, 4);
        let b = random_tensor(&mut rng, 4, 2);
        let c = random_tensor(&mut rng, 3, 4);
        let row = random_tensor(&mut rng, 1, 4);

        assert_primitive("matmul", named(vec![("a", a.clone()), ("b", b.clone())]), |t, v| {
            let y = t.matmul(v["a"], v["b"])?;
            weighted_sum(t, y, seed)
        });
        assert_primitive("add", named(vec![("a", a.clone()), ("c", c.clone())]), |t, v| {
            let y = t.add(v["a"], v["c"])?;
            weighted_sum(t, y, seed)
        });
        assert_primitive("scale", named(vec![("a", a.clone())]), |t, v| {
            let y = t.scale(v["a"], -1.7);
            weighted_sum(t, y, seed)
        });
        assert_primitive("mul", named(vec![("a", a.clone()), ("c", c.clone())]), |t, v| {
            let y = t.mul(v["a"], v["c"])?;
            weighted_sum(t, y, seed)
        });
        assert_primitive("add_row", named(vec![("a", a.clone()), ("r", row.clone())]), |t, v| {
            let y = t.add_row(v["a"], v["r"])?;
            weighted_sum(t, y, seed)
        });
        assert_primitive("relu", named(vec![("a", a.clone())]), |t, v| {
            let y = t.relu(v["a"]);
            weighted_sum(t, y, seed)
        });
        assert_primitive("sigmoid", named(vec![("a", a.clone())]), |t, v| {
            let y = t.sigmoid(v["a"]);
            weighted_sum(t, y, seed)
        });
        assert_primitive("concat_cols", named(vec![("a", a.clone()), ("c", c.clone())]), |t, v| {
            let y = t.concat_cols(v["a"], v["c"])?;
            weighted_sum(t, y, seed)
        });
        assert_primitive("gather_rows", named(vec![("a", a.clone())]), |t, v| {
            let y = t.gather_rows(v["a"], vec![2, 0, 2, 1])?;
            weighted_sum(t, y, seed)
        });
        assert_primitive("slice_rows", named(vec![("a", a.clone())]), |t, v| {
            let y = t.slice_rows(v["a"], 1, 2)?;
            weighted_sum(t, y, seed)
        });

        let g = random_graph(seed);
        let z = random_tensor(&mut rng, g.num_nodes(), 3);
        let w = Tensor::column((0..g.num_edges()).map(|_| rng.random_range(0.0..1.0)).collect());
        assert_primitive("neighbor_mean", named(vec![("z", z.clone())]), |t, v| {
            let y = t.neighbor_mean(v["z"], g.index(), None)?;
            weighted_sum(t, y, seed)
        });
        assert_primitive(
            "weighted neighbor_mean",
            named(vec![("z", z.clone()), ("w", w.clone())]),
            |t, v| {
                let y = t.neighbor_mean(v["z"], g.index(), Some(v["w"]))?;
                weighted_sum(t, y, seed)
            },
        );

        let logits = random_tensor(&mut rng, g.num_nodes(), 3);
        let mask: Vec<usize> = (0..g.num_nodes()).filter(|i| i % 3 != 1).collect();
        assert_primitive("softmax_cross_entropy", named(vec![("l", logits)]), |t, v| {
            t.softmax_cross_entropy(v["l"], g.labels(), mask.clone())
        });

        let raw = random_tensor(&mut rng, 5, 1);
        let targets: Vec<f64> = (0..5).map(|i| f64::from(i % 2)).collect();
        assert_primitive("binary_cross_entropy", named(vec![("x", raw)]), |t, v| {
            let p = t.sigmoid(v["x"]);
            t.binary_cross_entropy(p, targets.clone())
        });
    }
}

fn check_model(kind: ModelKind, seed: u64) {
    let g = random_graph(seed);
    let specs = stack_specs(kind, 3, 4, 2, 3, 3);
    // random biases keep the check away from relu kinks at exactly zero
    let mut params = ModelParams::init(&specs, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let biases: Vec<String> = params
        .iter()
        .filter(|(n, _)| is_bias(n))
        .map(|(n, _)| n.clone())
        .collect();
    for name in biases {
        let (r, c) = params.get(&name).unwrap().shape();
        params.set(&name, random_tensor(&mut rng, r, c)).unwrap();
    }
    let adjacency = g.normalized_adjacency();
    let inputs = GraphInputs::new(&g, Some(&adjacency));
    let train: Vec<usize> = (0..g.num_nodes()).filter(|i| i % 4 != 3).collect();
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    let supervision = GateSupervision::from_targets(&edge_targets_within(&g, &all));
    let check = finite_difference_check::<TrainError, _>(params.tensors(), STEP, |tape, vars| {
        let fwd = forward_on_tape(tape, &specs, vars, &inputs, Gates::Learned)?;
        Ok(loss_on_tape(tape, fwd.logits, &fwd.alphas, g.labels(), &train, &supervision, 1.0)?.total)
    })
    .unwrap();
    assert!(check.max_rel_error < TOL, "{kind} seed {seed}: {check:?}");
}

#[test]
fn mlp_gradients() {
    (0..SEEDS).for_each(|s| check_model(ModelKind::Mlp, s));
}

#[test]
fn gcn_gradients() {
    (0..SEEDS).for_each(|s| check_model(ModelKind::Gcn, s));
}

#[test]
fn sage_gradients() {
    (0..SEEDS).for_each(|s| check_model(ModelKind::Sage, s));
}

#[test]
fn gbk_gradients_including_gate() {
    (0..SEEDS).for_each(|s| check_model(ModelKind::Gbk, s));
}
