//! Independent oracles for the integration suites. Everything here is
//! written from first principles — recursive enumeration, exhaustive index
//! chains, KKT segment scans, finite differences — so agreement with the
//! library is evidence, not tautology.

#![allow(dead_code)]

use ndarray::Array2;
use pathexplain::gnn::{forward, GnnModel};
use pathexplain::graph::{Graph, NodeId};
use pathexplain::paths::Path;
use pathexplain::select::SelectionProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All length-`t_layers` walks of `g1` ending at `root` that use at least
/// one edge of `g1` missing from `g0`, with the highest crossing step, by
/// naive recursion over raw neighbor sets.
pub fn brute_force_changed_walks(
    g0: &Graph,
    g1: &Graph,
    root: NodeId,
    t_layers: usize,
) -> Vec<(Vec<NodeId>, usize)> {
    fn is_added(g0: &Graph, g1: &Graph, u: NodeId, v: NodeId) -> bool {
        u != v && g1.has_edge(u, v) && !g0.has_edge(u, v)
    }
    let mut found = Vec::new();
    // Build walks root-first, then reverse: suffix[0] = root.
    let mut suffix = vec![root];
    fn extend(
        g0: &Graph,
        g1: &Graph,
        t_layers: usize,
        suffix: &mut Vec<NodeId>,
        found: &mut Vec<(Vec<NodeId>, usize)>,
    ) {
        if suffix.len() == t_layers + 1 {
            let nodes: Vec<NodeId> = suffix.iter().rev().cloned().collect();
            let mut split = None;
            for t in 1..=t_layers {
                if is_added(g0, g1, nodes[t - 1], nodes[t]) {
                    split = Some(t);
                }
            }
            if let Some(split) = split {
                found.push((nodes, split));
            }
            return;
        }
        let tail = *suffix.last().unwrap();
        for &u in g1.neighbors(tail).unwrap() {
            suffix.push(u);
            extend(g0, g1, t_layers, suffix, found);
            suffix.pop();
        }
    }
    extend(g0, g1, t_layers, &mut suffix, &mut found);
    found.sort_by(|a, b| a.0.cmp(&b.0));
    found
}

/// Zero-reference relevance of one walk for one class, by exhaustive
/// enumeration of neuron index chains: for every chain `(i_0, …, i_T)` with
/// `i_T = class`, multiply the leaf feature, the traversed weight entries,
/// and the hidden-layer on/off gates of the evolved trace, then sum.
pub fn neuron_chain_relevance(
    model: &GnnModel,
    g1: &Graph,
    path: &Path,
    class: usize,
) -> f64 {
    let trace = forward(model, g1).expect("forward succeeds");
    let t_layers = model.layer_count();
    assert_eq!(path.steps(), t_layers);
    let nodes = path.nodes();

    fn descend(
        model: &GnnModel,
        trace_pre: &dyn Fn(usize, NodeId, usize) -> f64,
        nodes: &[NodeId],
        t_layers: usize,
        class: usize,
        t: usize,
        i_prev: usize,
        weight_product: f64,
    ) -> f64 {
        if t > t_layers {
            return weight_product;
        }
        let w = model.weight(t);
        let mut total = 0.0;
        let outputs = if t == t_layers {
            class..class + 1
        } else {
            0..model.dim(t)
        };
        for i in outputs {
            let mut factor = w[(i_prev, i)];
            if t < t_layers {
                // Hidden gate at the path's node for this layer.
                if trace_pre(t, nodes[t], i) <= 0.0 {
                    factor = 0.0;
                }
            }
            if factor != 0.0 {
                total += descend(
                    model,
                    trace_pre,
                    nodes,
                    t_layers,
                    class,
                    t + 1,
                    i,
                    weight_product * factor,
                );
            }
        }
        total
    }

    let pre = |t: usize, v: NodeId, i: usize| trace.pre_activation(t, v)[i];
    let mut total = 0.0;
    for i0 in 0..model.input_dim() {
        let x = g1.features()[(nodes[0], i0)];
        if x != 0.0 {
            total += descend(model, &pre, nodes, t_layers, class, 1, i0, x);
        }
    }
    total
}

/// Exact Euclidean projection onto `{x ∈ [0,1]^m : Σx = n}` by scanning the
/// KKT breakpoints: between breakpoints the clipped sum is affine in λ, so
/// each segment either contains the exact solution or does not.
pub fn lambda_scan_projection(v: &[f64], n: f64) -> Vec<f64> {
    let m = v.len();
    assert!(n >= 0.0 && n <= m as f64);
    let clipped = |lambda: f64| -> Vec<f64> {
        v.iter().map(|&x| (x - lambda).clamp(0.0, 1.0)).collect()
    };
    let sum_at = |lambda: f64| -> f64 { clipped(lambda).iter().sum() };

    let mut breakpoints: Vec<f64> = v.iter().flat_map(|&x| [x, x - 1.0]).collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    // Extend beyond both ends so every λ lives in some segment.
    let lo = breakpoints[0] - 1.0;
    let hi = breakpoints[breakpoints.len() - 1] + 1.0;
    let mut ends = vec![lo];
    ends.extend(breakpoints);
    ends.push(hi);

    for pair in ends.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (sa, sb) = (sum_at(a), sum_at(b));
        // Affine on [a, b]; decreasing in λ.
        if (sa - n).abs() < 1e-12 {
            return clipped(a);
        }
        if (sb - n).abs() < 1e-12 {
            return clipped(b);
        }
        if sa > n && n > sb {
            let lambda = a + (sa - n) / (sa - sb) * (b - a);
            return clipped(lambda);
        }
    }
    panic!("no KKT segment contained the budget {n}");
}

/// Central finite-difference gradient of the selection objective.
pub fn fd_gradient(problem: &SelectionProblem, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] += h;
            minus[i] -= h;
            (problem.objective(&plus) - problem.objective(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Visit every size-`n` subset of `0..m` in lexicographic order.
pub fn for_each_subset(m: usize, n: usize, mut visit: impl FnMut(&[usize])) {
    fn recurse(m: usize, n: usize, start: usize, acc: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if acc.len() == n {
            visit(acc);
            return;
        }
        let remaining = n - acc.len();
        for i in start..=(m - remaining) {
            acc.push(i);
            recurse(m, n, i + 1, acc, visit);
            acc.pop();
        }
    }
    if n > m {
        return;
    }
    let mut acc = Vec::with_capacity(n);
    recurse(m, n, 0, &mut acc, &mut visit);
}

/// Full forward pass with the message `gate_u → gate_v` at layer `gate_t`
/// multiplied by `scale`; returns the final-layer logits of every node.
/// Written with explicit per-node loops, independent of the engine.
pub fn gated_forward_logits(
    model: &GnnModel,
    g: &Graph,
    gate_t: usize,
    gate_u: NodeId,
    gate_v: NodeId,
    scale: f64,
) -> Array2<f64> {
    let n = g.num_nodes();
    let t_layers = model.layer_count();
    let mut h = g.features().clone();
    for t in 1..=t_layers {
        let w = model.weight(t);
        let mut z = Array2::<f64>::zeros((n, model.dim(t)));
        for v in 0..n {
            let mut agg = vec![0.0; h.ncols()];
            for &u in g.neighbors(v).unwrap() {
                let factor = if t == gate_t && u == gate_u && v == gate_v {
                    scale
                } else {
                    1.0
                };
                for (a, &hu) in agg.iter_mut().zip(h.row(u)) {
                    *a += factor * hu;
                }
            }
            for j in 0..w.ncols() {
                let mut s = 0.0;
                for (i, &a) in agg.iter().enumerate() {
                    s += a * w[(i, j)];
                }
                z[(v, j)] = s;
            }
        }
        if t < t_layers {
            z.mapv_inplace(|x| x.max(0.0));
        }
        h = z;
    }
    h
}

/// A reproducible random instance: a base graph, an evolved graph with
/// `added` extra edges, and a matching random model.
pub struct RandomInstance {
    pub model: GnnModel,
    pub g0: Graph,
    pub g1: Graph,
}

pub fn random_instance(
    seed: u64,
    num_nodes: usize,
    base_edges: usize,
    added: usize,
    dims: &[usize],
) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g0 = pathexplain::synth::random_graph(num_nodes, base_edges, dims[0], rng.gen()).unwrap();
    let delta = pathexplain::harness::simulate_evolution(&g0, added, rng.gen()).unwrap();
    let g1 = pathexplain::graph::apply_delta(&g0, &delta).unwrap();
    let model = pathexplain::synth::random_model(dims, rng.gen()).unwrap();
    RandomInstance { model, g0, g1 }
}
