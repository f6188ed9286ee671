//! Information-flow paths in a node's computation tree.
//!
//! Unrolling T layers of message passing around a root node yields a depth-T
//! computation tree; each leaf-to-root branch is a walk
//! `p = (p[0], p[1], ..., p[T])` with `p[T]` the root, where step `t` uses
//! the (possibly self-loop) edge `(p[t-1], p[t])`. Because every node
//! aggregates itself, walks may stay in place for any number of steps.
//!
//! When a snapshot `g1` extends a base snapshot `g0` by new edges, the paths
//! that did not exist before — those crossing at least one added edge — carry
//! the entire change of the root's logits. [`delta_paths`] enumerates exactly
//! these, tagging each with its split layer: the *highest* step index that
//! crosses an added edge. Above the split layer the walk lies in shared
//! structure, below it the walk may use anything in `g1`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

/// Refuse to enumerate more than this many changed paths for one root unless
/// the caller raises the cap explicitly.
pub const DEFAULT_PATH_CAP: u64 = 200_000;

/// One leaf-to-root walk through a computation tree.
///
/// `nodes[0]` is the leaf (layer 0) and `nodes[T]` the root (layer T).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    nodes: Vec<NodeId>,
    split_layer: Option<usize>,
}

impl Path {
    /// `split_layer` is the highest step crossing an added edge, if this is
    /// a changed path of some snapshot pair; `None` for plain walks.
    pub fn new(nodes: Vec<NodeId>, split_layer: Option<usize>) -> Self {
        assert!(nodes.len() >= 2, "a path needs at least one step");
        if let Some(t) = split_layer {
            assert!(
                (1..nodes.len()).contains(&t),
                "split layer {t} outside 1..={}",
                nodes.len() - 1
            );
        }
        Path { nodes, split_layer }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn leaf(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn root(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    /// Number of steps T (one less than the number of nodes).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Highest step index that crosses an added edge, when known.
    pub fn split_layer(&self) -> Option<usize> {
        self.split_layer
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for v in &self.nodes {
            if !first {
                write!(f, ">")?;
            }
            write!(f, "{v}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for Path {
    type Err = Error;

    /// Parse the `leaf>...>root` notation printed by [`Path`]'s `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let nodes: Vec<NodeId> = s
            .split('>')
            .map(|tok| {
                tok.trim()
                    .parse::<NodeId>()
                    .map_err(|_| Error::InvalidArg(format!("bad path node {tok:?} in {s:?}")))
            })
            .collect::<Result<_>>()?;
        if nodes.len() < 2 {
            return Err(Error::InvalidArg(format!(
                "path {s:?} needs at least two nodes"
            )));
        }
        Ok(Path::new(nodes, None))
    }
}

/// An ordered set of equal-length paths sharing one root, sorted by node
/// sequence. Row `i` of a contribution matrix always refers to `paths[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    /// Sort the paths lexicographically and validate that they share root
    /// and length and contain no duplicates. An empty set is fine.
    pub fn new(mut paths: Vec<Path>) -> Result<Self> {
        if let Some(first) = paths.first() {
            let (root, len) = (first.root(), first.nodes.len());
            for p in &paths {
                if p.nodes.len() != len {
                    return Err(Error::LengthMismatch(len, p.nodes.len()));
                }
                if p.root() != root {
                    return Err(Error::InvalidArg(format!(
                        "paths mix roots {root} and {}",
                        p.root()
                    )));
                }
            }
        }
        paths.sort_by(|a, b| a.nodes.cmp(&b.nodes));
        if paths.windows(2).any(|w| w[0].nodes == w[1].nodes) {
            return Err(Error::InvalidArg("duplicate path in set".into()));
        }
        Ok(PathSet { paths })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Path> {
        self.paths.iter()
    }

    pub fn get(&self, i: usize) -> &Path {
        &self.paths[i]
    }

    /// Common root of all paths, if the set is non-empty.
    pub fn root(&self) -> Option<NodeId> {
        self.paths.first().map(Path::root)
    }

    /// Position of the path with this exact node sequence, if present.
    pub fn index_of(&self, nodes: &[NodeId]) -> Option<usize> {
        self.paths
            .binary_search_by(|p| p.nodes.as_slice().cmp(nodes))
            .ok()
    }

    /// Subset by position. Indices may come in any order; duplicates are an
    /// error because selections are sets.
    pub fn select(&self, indices: &[usize]) -> Result<PathSet> {
        let mut idx: Vec<usize> = indices.to_vec();
        idx.sort_unstable();
        if idx.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArg("duplicate index in selection".into()));
        }
        if let Some(&last) = idx.last() {
            if last >= self.len() {
                return Err(Error::InvalidArg(format!(
                    "path index {last} out of range for {} paths",
                    self.len()
                )));
            }
        }
        // Already sorted because the parent set is.
        Ok(PathSet {
            paths: idx.into_iter().map(|i| self.paths[i].clone()).collect(),
        })
    }
}

impl<'a> IntoIterator for &'a PathSet {
    type Item = &'a Path;
    type IntoIter = std::slice::Iter<'a, Path>;

    fn into_iter(self) -> Self::IntoIter {
        self.paths.iter()
    }
}

fn check_root(g: &Graph, root: NodeId) -> Result<()> {
    if root >= g.num_nodes() {
        return Err(Error::NodeOutOfRange {
            node: root,
            num_nodes: g.num_nodes(),
        });
    }
    Ok(())
}

fn check_depth(t_layers: usize) -> Result<()> {
    if t_layers == 0 {
        return Err(Error::InvalidArg("need at least one layer".into()));
    }
    Ok(())
}

/// Every leaf-to-root walk of the depth-`t_layers` computation tree of
/// `root`. The count is the product of neighbourhood sizes along the way, so
/// keep this to small graphs or shallow models.
pub fn enumerate_paths(g: &Graph, root: NodeId, t_layers: usize) -> Result<PathSet> {
    check_root(g, root)?;
    check_depth(t_layers)?;
    let mut paths = Vec::new();
    // stack entry: partial walk root-first; extend until t_layers+1 nodes.
    let mut stack = vec![vec![root]];
    while let Some(prefix) = stack.pop() {
        if prefix.len() == t_layers + 1 {
            let nodes: Vec<NodeId> = prefix.into_iter().rev().collect();
            paths.push(Path::new(nodes, None));
            continue;
        }
        let v = *prefix.last().unwrap();
        for &u in g.nbrs(v) {
            let mut next = prefix.clone();
            next.push(u);
            stack.push(next);
        }
    }
    PathSet::new(paths)
}

/// Hops in `g1` from each node to the nearest endpoint of an edge that `g0`
/// lacks (`usize::MAX` when unreachable): a multi-source BFS used to prune
/// walks that can no longer reach an added edge in their remaining steps.
pub(crate) fn added_distance_map(g0: &Graph, g1: &Graph) -> Vec<usize> {
    let n = g1.num_nodes();
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for &(u, v) in g1.edges() {
        if !g0.has_edge(u, v) {
            for w in [u, v] {
                if dist[w] != 0 {
                    dist[w] = 0;
                    queue.push_back(w);
                }
            }
        }
    }
    while let Some(v) = queue.pop_front() {
        for &u in g1.nbrs(v) {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Shared state of the changed-path walk.
struct DeltaWalk<'a> {
    g0: &'a Graph,
    g1: &'a Graph,
    /// Hops in `g1` from each node to the nearest endpoint of an added edge.
    dist_to_added: Vec<usize>,
}

impl<'a> DeltaWalk<'a> {
    fn prepare(g0: &'a Graph, g1: &'a Graph, root: NodeId, t_layers: usize) -> Result<Self> {
        check_root(g1, root)?;
        check_depth(t_layers)?;
        if g0.num_nodes() != g1.num_nodes() {
            return Err(Error::DimensionMismatch {
                what: "snapshot node counts",
                expected: g0.num_nodes(),
                found: g1.num_nodes(),
            });
        }
        if !g1.contains_all_edges_of(g0) {
            return Err(Error::InvalidArg(
                "the evolved snapshot must contain every edge of the base snapshot".into(),
            ));
        }
        Ok(DeltaWalk {
            g0,
            g1,
            dist_to_added: added_distance_map(g0, g1),
        })
    }

    fn added(&self, u: NodeId, v: NodeId) -> bool {
        u != v && self.g1.has_edge(u, v) && !self.g0.has_edge(u, v)
    }

    /// A walk currently at `v` on layer `t` with no added edge crossed yet
    /// can still cross one iff an added-edge endpoint is within `t - 1` hops.
    fn can_still_cross(&self, v: NodeId, t: usize) -> bool {
        t >= 1 && self.dist_to_added[v] <= t - 1
    }
}

/// Enumerate the changed paths of `root`: depth-`t_layers` walks over `g1`
/// crossing at least one edge that `g0` lacks, each tagged with its split
/// layer. Errors if `g1` is not `g0` plus extra edges.
pub fn delta_paths(g0: &Graph, g1: &Graph, root: NodeId, t_layers: usize) -> Result<PathSet> {
    let walk = DeltaWalk::prepare(g0, g1, root, t_layers)?;
    let mut paths = Vec::new();
    // Depth-first from the root; `split` is `Some(t)` once an added edge was
    // crossed at step t (the first crossing seen from above is the highest).
    let mut stack: Vec<(Vec<NodeId>, Option<usize>)> = vec![(vec![root], None)];
    while let Some((prefix, split)) = stack.pop() {
        let v = *prefix.last().unwrap();
        let t = t_layers + 1 - prefix.len(); // layer of v
        if t == 0 {
            let nodes: Vec<NodeId> = prefix.into_iter().rev().collect();
            paths.push(Path::new(nodes, Some(split.expect("leaf without crossing"))));
            continue;
        }
        for &u in walk.g1.nbrs(v) {
            let child_split = match split {
                Some(t_bar) => Some(t_bar),
                None if walk.added(u, v) => Some(t),
                None => {
                    if !walk.can_still_cross(u, t - 1) {
                        continue;
                    }
                    None
                }
            };
            let mut next = prefix.clone();
            next.push(u);
            stack.push((next, child_split));
        }
    }
    PathSet::new(paths)
}

/// Number of changed paths of `root`, computed by dynamic programming over
/// `(node, crossed)` states — cheap even when the enumeration would explode.
/// Saturates at `u64::MAX`.
pub fn count_delta_paths(g0: &Graph, g1: &Graph, root: NodeId, t_layers: usize) -> Result<u64> {
    let walk = DeltaWalk::prepare(g0, g1, root, t_layers)?;
    let n = g1.num_nodes();
    // ways[v][c]: number of walks from (v, layer t) down to leaves such that
    // the full walk qualifies, with c = "an added edge was already crossed
    // above". Layer 0: only already-crossed walks count.
    let mut ways = vec![[0u64, 1u64]; n]; // [not crossed, crossed]
    for _ in 1..=t_layers {
        let mut next = vec![[0u64, 0u64]; n];
        for v in 0..n {
            let mut not_crossed = 0u64;
            let mut crossed = 0u64;
            for &u in walk.g1.nbrs(v) {
                crossed = crossed.saturating_add(ways[u][1]);
                if walk.added(u, v) {
                    not_crossed = not_crossed.saturating_add(ways[u][1]);
                } else {
                    not_crossed = not_crossed.saturating_add(ways[u][0]);
                }
            }
            next[v] = [not_crossed, crossed];
        }
        ways = next;
    }
    Ok(ways[root][0])
}

/// [`delta_paths`] guarded by a count precheck: errors with the count intact
/// instead of allocating an oversized enumeration.
pub fn delta_paths_with_cap(
    g0: &Graph,
    g1: &Graph,
    root: NodeId,
    t_layers: usize,
    cap: u64,
) -> Result<PathSet> {
    let count = count_delta_paths(g0, g1, root, t_layers)?;
    if count > cap {
        return Err(Error::PathCapExceeded { target: root, cap });
    }
    delta_paths(g0, g1, root, t_layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Three nodes J=0, K=1, L=2; base edge (K,L); the evolution adds (J,K).
    fn triangle_pair() -> (Graph, Graph) {
        let feats = Array2::zeros((3, 1));
        let g0 = Graph::new(3, vec![(1, 2)], feats.clone()).unwrap();
        let g1 = Graph::new(3, vec![(1, 2), (0, 1)], feats).unwrap();
        (g0, g1)
    }

    #[test]
    fn display_and_parse_round_trip() {
        let p = Path::new(vec![2, 1, 0], Some(2));
        assert_eq!(p.to_string(), "2>1>0");
        let q: Path = "2>1>0".parse().unwrap();
        assert_eq!(q.nodes(), p.nodes());
        assert!("7".parse::<Path>().is_err());
        assert!("1>x>0".parse::<Path>().is_err());
    }

    #[test]
    fn enumerate_counts_the_full_neighbourhood_product() {
        let feats = Array2::zeros((3, 1));
        let complete = Graph::new(3, vec![(0, 1), (0, 2), (1, 2)], feats).unwrap();
        let paths = enumerate_paths(&complete, 0, 2).unwrap();
        assert_eq!(paths.len(), 9, "3 choices at each of 2 steps");
        assert!(paths.iter().all(|p| p.root() == 0 && p.steps() == 2));
    }

    #[test]
    fn two_layer_delta_paths_of_the_worked_example() {
        let (g0, g1) = triangle_pair();
        let paths = delta_paths(&g0, &g1, 0, 2).unwrap();
        let seqs: Vec<&[usize]> = paths.iter().map(Path::nodes).collect();
        assert_eq!(
            seqs,
            vec![&[0, 1, 0][..], &[1, 0, 0], &[1, 1, 0], &[2, 1, 0]],
            "exactly the walks through the new edge, in sorted order"
        );
        let splits: Vec<usize> = paths.iter().map(|p| p.split_layer().unwrap()).collect();
        // (0,1,0): step 2 = (1,0) added;  (1,0,0): only step 1 = (1,0) added;
        // (1,1,0) and (2,1,0): step 2 = (1,0) added.
        assert_eq!(splits, vec![2, 1, 2, 2]);
    }

    #[test]
    fn delta_paths_for_an_unreachable_root_is_empty() {
        let (g0, g1) = triangle_pair();
        // Node 2 (L) is one hop from the new edge; with T = 1 no walk ending
        // at L can cross it.
        let paths = delta_paths(&g0, &g1, 2, 1).unwrap();
        assert!(paths.is_empty());
        assert_eq!(count_delta_paths(&g0, &g1, 2, 1).unwrap(), 0);
    }

    #[test]
    fn count_agrees_with_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let n = rng.gen_range(4..10);
            let mut edges = vec![];
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.gen_bool(0.3) {
                        edges.push((u, v));
                    }
                }
            }
            let feats = Array2::zeros((n, 1));
            let g0 = Graph::new(n, edges.clone(), feats.clone()).unwrap();
            let mut added = vec![];
            for u in 0..n {
                for v in (u + 1)..n {
                    if !g0.has_edge(u, v) && rng.gen_bool(0.15) {
                        added.push((u, v));
                    }
                }
            }
            let mut all = edges;
            all.extend(&added);
            let g1 = Graph::new(n, all, feats).unwrap();
            let t_layers = rng.gen_range(1..4);
            for root in 0..n {
                let listed = delta_paths(&g0, &g1, root, t_layers).unwrap();
                let counted = count_delta_paths(&g0, &g1, root, t_layers).unwrap();
                assert_eq!(
                    listed.len() as u64,
                    counted,
                    "trial {trial}, root {root}, T {t_layers}"
                );
            }
        }
    }

    #[test]
    fn every_delta_path_crosses_an_added_edge_at_its_split_layer() {
        let (g0, g1) = triangle_pair();
        for root in 0..3 {
            for t_layers in 1..4 {
                for p in delta_paths(&g0, &g1, root, t_layers).unwrap().iter() {
                    let t = p.split_layer().unwrap();
                    let (a, b) = (p.nodes()[t - 1], p.nodes()[t]);
                    assert!(
                        g1.has_edge(a, b) && !g0.has_edge(a, b) && a != b,
                        "step {t} of {p} is not an added edge"
                    );
                    // No added edge above the split layer.
                    for s in (t + 1)..=p.steps() {
                        let (a, b) = (p.nodes()[s - 1], p.nodes()[s]);
                        assert!(
                            a == b || g0.has_edge(a, b),
                            "step {s} of {p} crosses an added edge above the split"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn cap_blocks_oversized_enumerations() {
        let (g0, g1) = triangle_pair();
        let err = delta_paths_with_cap(&g0, &g1, 0, 2, 3).unwrap_err();
        assert!(matches!(err, Error::PathCapExceeded { target: 0, cap: 3 }));
        let ok = delta_paths_with_cap(&g0, &g1, 0, 2, 4).unwrap();
        assert_eq!(ok.len(), 4);
    }

    #[test]
    fn snapshot_pair_must_nest() {
        let feats = Array2::zeros((3, 1));
        let g0 = Graph::new(3, vec![(0, 1)], feats.clone()).unwrap();
        let g1 = Graph::new(3, vec![(1, 2)], feats).unwrap();
        assert!(delta_paths(&g0, &g1, 0, 2).is_err());
    }

    #[test]
    fn path_set_select_and_index_of() {
        let (g0, g1) = triangle_pair();
        let paths = delta_paths(&g0, &g1, 0, 2).unwrap();
        assert_eq!(paths.index_of(&[1, 1, 0]), Some(2));
        assert_eq!(paths.index_of(&[2, 2, 0]), None);
        let subset = paths.select(&[3, 0]).unwrap();
        assert_eq!(subset.len(), 2);
        assert_eq!(subset.get(0).nodes(), &[0, 1, 0]);
        assert_eq!(subset.get(1).nodes(), &[2, 1, 0]);
        assert!(paths.select(&[0, 0]).is_err(), "duplicate indices rejected");
        assert!(paths.select(&[9]).is_err(), "out of range rejected");
    }

    #[test]
    fn path_sets_reject_mixed_roots_and_lengths() {
        let a = Path::new(vec![0, 1], None);
        let b = Path::new(vec![1, 2], None);
        assert!(PathSet::new(vec![a.clone(), b]).is_err());
        let c = Path::new(vec![0, 0, 1], None);
        assert!(PathSet::new(vec![a.clone(), c]).is_err());
        assert!(PathSet::new(vec![a.clone(), a]).is_err(), "duplicates rejected");
    }
}
