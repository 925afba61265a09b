//! Stratified train/validation/test splits and gate supervision targets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Val,
    Test,
}

/// Disjoint node sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMasks {
    /// Sorts the sets and checks they are disjoint and in range.
    pub fn new(
        mut train: Vec<usize>,
        mut val: Vec<usize>,
        mut test: Vec<usize>,
        num_nodes: usize,
    ) -> Result<Self, GraphError> {
        let mut seen = vec![false; num_nodes];
        for set in [&mut train, &mut val, &mut test] {
            set.sort_unstable();
            for &i in set.iter() {
                if i >= num_nodes {
                    return Err(GraphError::EdgeOutOfRange {
                        src: i,
                        dst: i,
                        num_nodes,
                    });
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(GraphError::OverlappingMasks(i));
                }
            }
        }
        Ok(Self { train, val, test })
    }

    /// Per-node role, `None` for nodes outside all three sets.
    pub fn roles(&self, num_nodes: usize) -> Vec<Option<Role>> {
        let mut roles = vec![None; num_nodes];
        for (set, role) in [
            (&self.train, Role::Train),
            (&self.val, Role::Val),
            (&self.test, Role::Test),
        ] {
            for &i in set {
                roles[i] = Some(role);
            }
        }
        roles
    }

    pub fn membership(set: &[usize], num_nodes: usize) -> Vec<bool> {
        let mut m = vec![false; num_nodes];
        for &i in set {
            m[i] = true;
        }
        m
    }
}

/// Per-class stratified random split.
///
/// For a class of size `c`, validation and test receive `⌊c·f⌋` nodes and
/// train takes the remainder, so small classes fill train first.
pub fn make_splits(
    graph: &Graph,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitMasks, GraphError> {
    if fractions.iter().any(|&f| !(f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(GraphError::InvalidFractions(fractions));
    }
    let mut by_class = vec![Vec::new(); graph.num_classes()];
    for (i, &y) in graph.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(GraphError::EmptyClass(empty));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for nodes in &mut by_class {
        nodes.shuffle(&mut rng);
        let c = nodes.len();
        let n_val = (c as f64 * fractions[1]).floor() as usize;
        let n_test = (c as f64 * fractions[2]).floor() as usize;
        let n_train = c - n_val - n_test;
        train.extend_from_slice(&nodes[..n_train]);
        val.extend_from_slice(&nodes[n_train..n_train + n_val]);
        test.extend_from_slice(&nodes[n_train + n_val..]);
    }
    SplitMasks::new(train, val, test, graph.num_nodes())
}

/// Same-label supervision for one directed edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateTarget {
    /// Position of the edge in the graph's edge order.
    pub edge: usize,
    pub src: usize,
    pub dst: usize,
    pub same: bool,
}

impl GateTarget {
    pub fn target(&self) -> f64 {
        if self.same {
            1.0
        } else {
            0.0
        }
    }
}

/// Gate targets for every stored edge with both endpoints in `set`.
pub fn edge_targets_within(graph: &Graph, set: &[usize]) -> Vec<GateTarget> {
    let inside = SplitMasks::membership(set, graph.num_nodes());
    let labels = graph.labels();
    graph
        .edges()
        .enumerate()
        .filter(|&(_, (s, d))| inside[s] && inside[d])
        .map(|(edge, (src, dst))| GateTarget {
            edge,
            src,
            dst,
            same: labels[src] == labels[dst],
        })
        .collect()
}

/// Supervision edges: both endpoints in the training set.
pub fn gate_targets(graph: &Graph, masks: &SplitMasks) -> Vec<GateTarget> {
    edge_targets_within(graph, &masks.train)
}
