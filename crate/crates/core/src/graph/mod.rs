//! Undirected graphs, the GCN-renormalized adjacency and node-level data.
//!
//! A [`Graph`] stores the raw, self-loop-free structure in CSR form with
//! sorted column indices. [`NormalizedAdjacency`] adds a self-loop to every
//! node and weights entry `(i, j)` by `1/sqrt((d_i + 1)(d_j + 1))`, where
//! `d` is the raw degree.

mod adjacency;
mod generators;
pub mod io;

pub use adjacency::{normalize_adjacency, NormalizedAdjacency};
pub use generators::{generate_synthetic, planted_partition, SyntheticKind};

use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simple undirected graph in compressed sparse row form.
///
/// Every undirected edge `{u, v}` appears twice (`u -> v` and `v -> u`).
/// Self-edges are never stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    node_count: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Graph {
    /// Builds a deduplicated, symmetrized graph from an undirected edge list.
    pub fn from_edges(edges: &[(usize, usize)], node_count: usize) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); node_count];
        for &(u, v) in edges {
            for index in [u, v] {
                if index >= node_count {
                    return Err(Error::NodeOutOfRange { index, node_count });
                }
            }
            if u == v {
                return Err(Error::SelfEdge(u));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut row_ptr = Vec::with_capacity(node_count + 1);
        let mut col_idx = Vec::with_capacity(edges.len() * 2);
        row_ptr.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(&row);
            row_ptr.push(col_idx.len());
        }
        Ok(Graph {
            node_count,
            row_ptr,
            col_idx,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.col_idx.len() / 2
    }

    /// Sorted neighbor list of `node` (never contains `node` itself).
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[node]..self.row_ptr[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.row_ptr[node + 1] - self.row_ptr[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` pairs with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    pub(crate) fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub(crate) fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Connected-component id of every node (BFS order, ids start at 0).
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.node_count];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.node_count {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

/// Builds a graph from an undirected edge list; duplicates and reversed
/// duplicates collapse to one edge.
pub fn build_graph(edges: &[(usize, usize)], node_count: usize) -> Result<Graph> {
    Graph::from_edges(edges, node_count)
}

/// Disjoint union of `graphs`, re-indexing nodes block by block.
///
/// This is the approximation graph used to evaluate adjacency-dependent
/// plans when training data is a collection of small graphs.
pub fn merge_graphs(graphs: &[Graph]) -> Result<Graph> {
    if graphs.is_empty() {
        return Err(Error::invalid("merge_graphs needs at least one graph"));
    }
    let total: usize = graphs.iter().map(Graph::node_count).sum();
    let mut row_ptr = Vec::with_capacity(total + 1);
    let mut col_idx = Vec::with_capacity(graphs.iter().map(|g| g.col_idx.len()).sum());
    row_ptr.push(0);
    let mut offset = 0;
    for g in graphs {
        for u in 0..g.node_count {
            col_idx.extend(g.neighbors(u).iter().map(|&v| v + offset));
            row_ptr.push(col_idx.len());
        }
        offset += g.node_count;
    }
    Ok(Graph {
        node_count: total,
        row_ptr,
        col_idx,
    })
}

/// Dense node-feature matrix, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(FeatureMatrix(values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::dim("feature rows have unequal lengths"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), width), flat)
            .map_err(|e| Error::dim(e.to_string()))?;
        Self::new(values)
    }

    pub fn node_count(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Per-node mean over feature entries: the `h0bar` vector consumed by the
/// forward variance formulas.
pub fn feature_means(x: &FeatureMatrix) -> Result<Vec<f64>> {
    if x.dim() == 0 {
        return Err(Error::invalid("feature matrix has zero width"));
    }
    let width = x.dim() as f64;
    Ok(x.0.rows().into_iter().map(|r| r.sum() / width).collect())
}

/// Class index per node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
    classes: usize,
}

impl LabelVector {
    /// `classes` must exceed every label.
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(LabelVector { labels, classes })
    }

    /// Infers the class count as `max + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        LabelVector { labels, classes }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, node: usize) -> usize {
        self.labels[node]
    }
}

/// Boolean node mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMask(Vec<bool>);

impl NodeMask {
    pub fn new(mask: Vec<bool>) -> Self {
        NodeMask(mask)
    }

    pub fn all(n: usize) -> Self {
        NodeMask(vec![true; n])
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut mask = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::NodeOutOfRange {
                    index: i,
                    node_count: n,
                });
            }
            mask[i] = true;
        }
        Ok(NodeMask(mask))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.0[node]
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

/// Disjoint train / validation / test masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: NodeMask,
    pub valid: NodeMask,
    pub test: NodeMask,
}

impl Split {
    pub fn new(train: NodeMask, valid: NodeMask, test: NodeMask) -> Result<Self> {
        let n = train.len();
        if valid.len() != n || test.len() != n {
            return Err(Error::dim("split masks have different lengths"));
        }
        for i in 0..n {
            let hits = [&train, &valid, &test]
                .iter()
                .filter(|m| m.contains(i))
                .count();
            if hits > 1 {
                return Err(Error::invalid(format!(
                    "node {i} appears in more than one split"
                )));
            }
        }
        Ok(Split { train, valid, test })
    }

    /// Seeded random split with the given train / validation fractions; the
    /// rest goes to test.
    pub fn random(n: usize, train_frac: f64, valid_frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_frac)
            || !(0.0..=1.0).contains(&valid_frac)
            || train_frac + valid_frac > 1.0
        {
            return Err(Error::invalid("split fractions must lie in [0, 1] and sum to at most 1"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let n_train = (train_frac * n as f64).round() as usize;
        let n_valid = (valid_frac * n as f64).round() as usize;
        let (train, rest) = order.split_at(n_train.min(n));
        let (valid, test) = rest.split_at(n_valid.min(rest.len()));
        Split::new(
            NodeMask::from_indices(n, train)?,
            NodeMask::from_indices(n, valid)?,
            NodeMask::from_indices(n, test)?,
        )
    }
}
