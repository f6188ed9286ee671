//! Graph snapshots and edge deltas.
//!
//! A [`Graph`] is an undirected, unweighted snapshot with dense node features.
//! Node ids are contiguous and 0-based. Every node carries an *implicit*
//! self-loop: the neighbour list of `v` always contains `v`, and explicit
//! `(v, v)` pairs are rejected at construction. Edges are stored once in
//! canonical `(min, max)` order.
//!
//! Evolution between two snapshots is described by an [`EdgeDelta`] listing
//! the edges added to the base snapshot; [`apply_delta`] produces the evolved
//! snapshot. Features are shared between the two snapshots (evolution changes
//! connectivity, never features), so applying a delta is cheap even for large
//! feature matrices.

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};

/// 0-based node identifier.
pub type NodeId = usize;

/// An immutable graph snapshot: undirected edges plus dense node features.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    /// Canonical `(min, max)` pairs, sorted ascending, no duplicates,
    /// no self pairs.
    edges: Vec<(NodeId, NodeId)>,
    /// Sorted adjacency lists; `nbrs[v]` always contains `v` itself.
    nbrs: Vec<Vec<NodeId>>,
    /// `num_nodes x d` feature matrix, shared across snapshots.
    features: Arc<Array2<f64>>,
}

impl Graph {
    /// Build a snapshot from an undirected edge list and a feature matrix.
    ///
    /// Pairs may come in either orientation; they are canonicalised here.
    /// Rejects out-of-range endpoints, duplicate edges (in either
    /// orientation), explicit self pairs, a feature row count different from
    /// `num_nodes`, and non-finite feature entries.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(NodeId, NodeId)>,
        features: Array2<f64>,
    ) -> Result<Self> {
        if features.nrows() != num_nodes {
            return Err(Error::DimensionMismatch {
                what: "feature rows",
                expected: num_nodes,
                found: features.nrows(),
            });
        }
        if !features.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Self::with_shared_features(num_nodes, edges, Arc::new(features))
    }

    fn with_shared_features(
        num_nodes: usize,
        edges: Vec<(NodeId, NodeId)>,
        features: Arc<Array2<f64>>,
    ) -> Result<Self> {
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u == v {
                return Err(Error::ExplicitSelfLoop(u));
            }
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(Error::NodeOutOfRange { node, num_nodes });
                }
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        for w in canon.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateEdge(w[0].0, w[0].1));
            }
        }

        let mut nbrs: Vec<Vec<NodeId>> = (0..num_nodes).map(|v| vec![v]).collect();
        for &(u, v) in &canon {
            nbrs[u].push(v);
            nbrs[v].push(u);
        }
        for list in &mut nbrs {
            list.sort_unstable();
        }

        Ok(Graph {
            num_nodes,
            edges: canon,
            nbrs,
            features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of explicit undirected edges (self-loops are not counted).
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub(crate) fn features_arc(&self) -> Arc<Array2<f64>> {
        Arc::clone(&self.features)
    }

    /// Canonical sorted edge list, self-loops excluded.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    /// Adjacency test. `(v, v)` is adjacent for every valid `v` because
    /// self-loops are implicit.
    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        if u >= self.num_nodes || v >= self.num_nodes {
            return false;
        }
        if u == v {
            return true;
        }
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    /// Sorted neighbour list of `v`, always containing `v` itself.
    pub fn neighbors(&self, v: NodeId) -> Result<&[NodeId]> {
        self.nbrs.get(v).map(|list| list.as_slice()).ok_or(Error::NodeOutOfRange {
            node: v,
            num_nodes: self.num_nodes,
        })
    }

    /// Unchecked neighbour access for hot loops over validated ids.
    pub(crate) fn nbrs(&self, v: NodeId) -> &[NodeId] {
        &self.nbrs[v]
    }

    /// Neighbour count including the implicit self-loop.
    pub fn degree(&self, v: NodeId) -> Result<usize> {
        self.neighbors(v).map(|n| n.len())
    }

    pub fn max_degree(&self) -> usize {
        self.nbrs.iter().map(|l| l.len()).max().unwrap_or(0)
    }

    /// True when every edge of `other` is present in `self`.
    pub fn contains_all_edges_of(&self, other: &Graph) -> bool {
        other
            .edges
            .iter()
            .all(|&(u, v)| self.edges.binary_search(&(u, v)).is_ok())
    }
}

/// The edges added when a base snapshot evolves. Removals are out of scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeDelta {
    /// Canonical `(min, max)` pairs, sorted, no duplicates.
    added: Vec<(NodeId, NodeId)>,
}

impl EdgeDelta {
    /// Canonicalise and validate a list of added pairs. Self pairs are
    /// rejected (the implicit self-loop is always present) and so are
    /// duplicates, even across orientations.
    pub fn new(pairs: Vec<(NodeId, NodeId)>) -> Result<Self> {
        let mut added = Vec::with_capacity(pairs.len());
        for (u, v) in pairs {
            if u == v {
                return Err(Error::ExplicitSelfLoop(u));
            }
            added.push((u.min(v), u.max(v)));
        }
        added.sort_unstable();
        for w in added.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateEdge(w[0].0, w[0].1));
            }
        }
        Ok(EdgeDelta { added })
    }

    pub fn empty() -> Self {
        EdgeDelta { added: Vec::new() }
    }

    /// Canonical sorted list of added pairs.
    pub fn added(&self) -> &[(NodeId, NodeId)] {
        &self.added
    }

    pub fn len(&self) -> usize {
        self.added.len()
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
    }
}

/// Apply an edge delta to a base snapshot, yielding the evolved snapshot.
///
/// Rejects pairs whose endpoints are out of range and pairs already present
/// in the base graph. The result shares the base snapshot's feature matrix;
/// the base graph itself is left untouched.
pub fn apply_delta(g0: &Graph, delta: &EdgeDelta) -> Result<Graph> {
    for &(u, v) in delta.added() {
        for node in [u, v] {
            if node >= g0.num_nodes {
                return Err(Error::NodeOutOfRange {
                    node,
                    num_nodes: g0.num_nodes,
                });
            }
        }
        if g0.has_edge(u, v) {
            return Err(Error::DuplicateEdge(u, v));
        }
    }
    let mut edges = g0.edges.clone();
    edges.extend_from_slice(delta.added());
    Graph::with_shared_features(g0.num_nodes, edges, g0.features_arc())
}
