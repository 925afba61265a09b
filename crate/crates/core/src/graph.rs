//! Immutable attributed graphs and homophily statistics.
//!
//! Edges are stored directed and sorted by `(src, dst)`. An undirected
//! dataset keeps both orientations of every edge. Self-loops are never
//! stored; layers that need a self contribution add it themselves.

use crate::error::GraphError;
use crate::tensor::Tensor;

/// Compressed adjacency: the out-neighbors of node `i` are
/// `targets[offsets[i]..offsets[i + 1]]`, and position `e` in `targets` is
/// the directed edge with id `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    offsets: Vec<usize>,
    sources: Vec<usize>,
    targets: Vec<usize>,
}

impl NeighborIndex {
    /// Builds the index from edges already sorted by `(src, dst)`.
    fn from_sorted(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut offsets = vec![0; num_nodes + 1];
        for &(s, _) in edges {
            offsets[s + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        Self {
            offsets,
            sources: edges.iter().map(|e| e.0).collect(),
            targets: edges.iter().map(|e| e.1).collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Edge ids whose source is `i`.
    #[inline]
    pub fn edge_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    name: String,
    undirected: bool,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    index: NeighborIndex,
}

impl Graph {
    /// Validates and stores a directed graph. Duplicate edges collapse to one.
    pub fn new(
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, GraphError> {
        Self::build(edges, features, labels, num_classes, false)
    }

    /// Like [`Graph::new`], but adds the reverse of every edge.
    pub fn new_undirected(
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, GraphError> {
        Self::build(edges, features, labels, num_classes, true)
    }

    fn build(
        mut edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        undirected: bool,
    ) -> Result<Self, GraphError> {
        let num_nodes = labels.len();
        if features.rows() != num_nodes {
            return Err(GraphError::CountMismatch {
                what: "feature rows",
                expected: num_nodes,
                found: features.rows(),
            });
        }
        for (node, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(GraphError::LabelOutOfRange {
                    node,
                    label,
                    num_classes,
                });
            }
        }
        for &(src, dst) in &edges {
            if src >= num_nodes || dst >= num_nodes {
                return Err(GraphError::EdgeOutOfRange {
                    src,
                    dst,
                    num_nodes,
                });
            }
            if src == dst {
                return Err(GraphError::SelfLoop(src));
            }
        }
        if undirected {
            let reversed: Vec<_> = edges.iter().map(|&(s, d)| (d, s)).collect();
            edges.extend(reversed);
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self {
            name: String::new(),
            undirected,
            index: NeighborIndex::from_sorted(num_nodes, &edges),
            features,
            labels,
            num_classes,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.index.num_edges()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.index.neighbors(i)
    }

    /// Stored directed edges in id order.
    pub fn edges(&self) -> impl ExactSizeIterator<Item = (usize, usize)> + '_ {
        self.index
            .sources()
            .iter()
            .copied()
            .zip(self.index.targets().iter().copied())
    }

    /// Fraction of stored directed edges joining same-label endpoints.
    pub fn homophily_ratio(&self) -> Result<f64, GraphError> {
        if self.num_edges() == 0 {
            return Err(GraphError::EmptyEdgeSet);
        }
        let same = self
            .edges()
            .filter(|&(s, d)| self.labels[s] == self.labels[d])
            .count();
        Ok(same as f64 / self.num_edges() as f64)
    }

    /// `(same-label neighbors, degree)` of node `i`.
    pub fn homophily_counts(&self, i: usize) -> (usize, usize) {
        let y = self.labels[i];
        let nbrs = self.neighbors(i);
        let same = nbrs.iter().filter(|&&j| self.labels[j] == y).count();
        (same, nbrs.len())
    }

    /// Node-level homophily ratio; `None` for nodes without neighbors.
    pub fn node_homophily_ratio(&self, i: usize) -> Option<f64> {
        match self.homophily_counts(i) {
            (_, 0) => None,
            (same, deg) => Some(same as f64 / deg as f64),
        }
    }

    pub fn node_homophily_ratios(&self) -> Vec<Option<f64>> {
        (0..self.num_nodes())
            .map(|i| self.node_homophily_ratio(i))
            .collect()
    }

    /// Dense `D⁻¹(A + I)` with `D[i,i] = |N(i)| + 1`.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.num_nodes();
        let mut adj = Tensor::zeros(n, n);
        for i in 0..n {
            let nbrs = self.neighbors(i);
            let w = 1.0 / (nbrs.len() + 1) as f64;
            adj.set(i, i, w);
            for &j in nbrs {
                adj.set(i, j, w);
            }
        }
        adj
    }

    /// Node count of each class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_classes];
        for &y in &self.labels {
            sizes[y] += 1;
        }
        sizes
    }
}
