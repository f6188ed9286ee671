//! Synthetic instances: random graphs, citation-like labeled graphs, and
//! randomly parameterized models. Every generator is a pure function of its
//! seed (via ChaCha8), so instances are reproducible across runs and
//! platforms.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::graph::Graph;

/// A model with weights drawn uniformly from `[-s, s]`, `s = 1/√d_in` per
/// layer (the usual fan-in scaling, keeping logits O(1) at any depth).
pub fn random_model(dims: &[usize], seed: u64) -> Result<GnnModel> {
    if dims.len() < 2 {
        return Err(Error::InvalidArg(
            "a model needs an input dimension and at least one layer".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = dims
        .windows(2)
        .map(|pair| {
            let scale = (1.0 / pair[0] as f64).sqrt();
            Array2::from_shape_fn((pair[0], pair[1]), |_| rng.gen_range(-scale..scale))
        })
        .collect();
    GnnModel::new(weights)
}

/// A uniform random simple graph with `num_edges` distinct edges and
/// features uniform in `[-1, 1]`.
pub fn random_graph(
    num_nodes: usize,
    num_edges: usize,
    feat_dim: usize,
    seed: u64,
) -> Result<Graph> {
    let capacity = num_nodes.saturating_mul(num_nodes.saturating_sub(1)) / 2;
    if num_edges > capacity {
        return Err(Error::InvalidArg(format!(
            "{num_edges} edges requested but only {capacity} distinct pairs exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    while edges.len() < num_edges {
        let u = rng.gen_range(0..num_nodes);
        let v = rng.gen_range(0..num_nodes);
        if u == v {
            continue;
        }
        edges.insert((u.min(v), u.max(v)));
    }
    let feats = Array2::from_shape_fn((num_nodes, feat_dim), |_| rng.gen_range(-1.0..1.0));
    Graph::new(num_nodes, edges.into_iter().collect(), feats)
}

/// A citation-like labeled graph: uniform class labels, edges biased toward
/// same-class pairs by `homophily`, and sparse 0/1 bag-of-words features
/// whose active entries concentrate in a per-class block. Returns the graph
/// and the node labels.
pub fn citation_graph(
    num_nodes: usize,
    num_classes: usize,
    feat_dim: usize,
    avg_degree: f64,
    homophily: f64,
    seed: u64,
) -> Result<(Graph, Vec<usize>)> {
    if num_classes == 0 || num_nodes < 2 * num_classes {
        return Err(Error::InvalidArg(format!(
            "{num_nodes} nodes cannot host {num_classes} classes with two members each"
        )));
    }
    if feat_dim < num_classes {
        return Err(Error::InvalidArg(format!(
            "feature dimension {feat_dim} below class count {num_classes}"
        )));
    }
    if !(0.0..=1.0).contains(&homophily) || !homophily.is_finite() {
        return Err(Error::InvalidArg(format!(
            "homophily {homophily} outside [0, 1]"
        )));
    }
    let target_edges = (num_nodes as f64 * avg_degree / 2.0).round() as usize;
    let capacity = num_nodes * (num_nodes - 1) / 2;
    if avg_degree <= 0.0 || target_edges == 0 || target_edges > capacity / 2 {
        return Err(Error::InvalidArg(format!(
            "average degree {avg_degree} gives {target_edges} edges, outside (0, {}]",
            capacity / 2
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Round-robin base assignment guarantees each class is populated, then
    // a shuffle decouples labels from node ids.
    let mut labels: Vec<usize> = (0..num_nodes).map(|i| i % num_classes).collect();
    for i in (1..num_nodes).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (v, &y) in labels.iter().enumerate() {
        by_class[y].push(v);
    }

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut attempts = 0usize;
    let attempt_cap = 200 * target_edges + 10_000;
    while edges.len() < target_edges {
        attempts += 1;
        if attempts > attempt_cap {
            return Err(Error::InvalidArg(format!(
                "could not place {target_edges} edges with homophily {homophily}; \
                 the class partition is too tight"
            )));
        }
        let u = rng.gen_range(0..num_nodes);
        let v = if rng.gen_bool(homophily) {
            let peers = &by_class[labels[u]];
            peers[rng.gen_range(0..peers.len())]
        } else {
            rng.gen_range(0..num_nodes)
        };
        if u == v {
            continue;
        }
        edges.insert((u.min(v), u.max(v)));
    }

    // Sparse binary features: a dense block of the feature space belongs to
    // each class; in-block entries fire often, off-block entries rarely.
    let block = feat_dim / num_classes;
    let feats = Array2::from_shape_fn((num_nodes, feat_dim), |(v, j)| {
        let class_block = if block == 0 { j } else { j / block };
        let in_block = class_block.min(num_classes - 1) == labels[v];
        let p = if in_block { 0.5 } else { 0.02 };
        if rng.gen_bool(p) {
            1.0
        } else {
            0.0
        }
    });
    let graph = Graph::new(num_nodes, edges.into_iter().collect(), feats)?;
    Ok((graph, labels))
}
