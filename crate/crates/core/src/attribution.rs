//! Exact decomposition of a logit change over changed paths.
//!
//! For a target node whose graph gained edges, the change of its final
//! logits splits — without residual — into one contribution vector per
//! changed path. Each contribution is a product along the walk:
//!
//! ```text
//! C_p = x_leaf · W(1) · D_1 · W(2) · D_2 · ... · W(T-1) · D_{T-1} · W(T)
//! ```
//!
//! where `D_t` is a diagonal rescaling at the walk's layer-t node. The
//! rescaler linearises the ReLU between two reference points:
//!
//! * at or above the walk's split layer (the highest step crossing an added
//!   edge) the walk lives in shared structure, and the rescaler is the
//!   *difference* ratio `Δh / Δz` between the evolved and base snapshots;
//! * strictly below the split layer the walk's upstream did not exist
//!   before, and the rescaler is the *full* ratio `h / z` on the evolved
//!   snapshot — which for ReLU is exactly its activation gate.
//!
//! When a denominator vanishes (|Δz| below [`RESCALE_EPS`]) the ratio falls
//! back to the evolved snapshot's ReLU gate; the fallback is exact whenever
//! the difference is exactly zero, so column sums still telescope to the
//! logit change. [`ContributionMatrix::new`] enforces that telescoping to
//! [`COMPLETENESS_THRESHOLD`] and refuses to construct otherwise.
//!
//! [`AttributionEngine`] walks the computation tree root-down once per
//! target, sharing partial suffix products `W(t)·D_t·...·W(T)` across all
//! walks through the same tree vertex, so the cost is linear in tree
//! vertices rather than paths times depth. [`path_contribution`] evaluates
//! one walk in isolation — slower but independent, which makes it the
//! cross-check of choice for the engine.

use std::time::{Duration, Instant};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::gnn::{row_times_matrix, ForwardTrace, GnnModel};
use crate::graph::{Graph, NodeId};
use crate::paths::{added_distance_map, count_delta_paths, Path, PathSet, DEFAULT_PATH_CAP};

/// Below this magnitude a rescaling denominator counts as zero and the
/// ratio falls back to the evolved snapshot's ReLU gate.
pub const RESCALE_EPS: f64 = 1e-9;

/// Maximum tolerated gap between contribution column sums and the actual
/// logit change; a larger gap is a construction error, not a warning.
pub const COMPLETENESS_THRESHOLD: f64 = 1e-5;

/// Per-path contribution vectors plus the logit change they must sum to.
///
/// Row `i` belongs to path `i` of the accompanying [`PathSet`]; column `j`
/// is the path's contribution to class `j`'s logit change. Construction
/// fails unless the columns sum to `delta_z` within
/// [`COMPLETENESS_THRESHOLD`], so a value of this type is evidence that the
/// decomposition is exact.
#[derive(Debug, Clone)]
pub struct ContributionMatrix {
    matrix: Array2<f64>,
    delta_z: Vec<f64>,
}

impl ContributionMatrix {
    /// Validate finiteness and the telescoping identity, then wrap.
    pub fn new(matrix: Array2<f64>, delta_z: Vec<f64>) -> Result<Self> {
        if matrix.ncols() != delta_z.len() {
            return Err(Error::LengthMismatch(matrix.ncols(), delta_z.len()));
        }
        if !matrix.iter().all(|x| x.is_finite()) || !delta_z.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("path contributions"));
        }
        let cm = ContributionMatrix { matrix, delta_z };
        let gap = cm.completeness_gap();
        if gap > COMPLETENESS_THRESHOLD {
            return Err(Error::CompletenessViolation {
                gap,
                threshold: COMPLETENESS_THRESHOLD,
            });
        }
        Ok(cm)
    }

    pub fn num_paths(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.ncols()
    }

    /// The `paths x classes` contribution matrix.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Contribution vector of path `i`.
    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.matrix.row(i)
    }

    /// The logit change the rows sum to.
    pub fn delta_z(&self) -> &[f64] {
        &self.delta_z
    }

    /// Column sums accumulated in ascending row order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.matrix.ncols()];
        for row in self.matrix.rows() {
            for (s, &x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums
    }

    /// Largest absolute difference between a column sum and the matching
    /// logit-change entry.
    pub fn completeness_gap(&self) -> f64 {
        self.column_sums()
            .iter()
            .zip(&self.delta_z)
            .map(|(s, d)| (s - d).abs())
            .fold(0.0, f64::max)
    }
}

/// A target's changed paths, their contribution matrix, and how long the
/// enumeration plus attribution took.
#[derive(Debug, Clone)]
pub struct PathAttribution {
    pub paths: PathSet,
    pub contributions: ContributionMatrix,
    pub build_time: Duration,
}

/// Reusable attribution state for one `(model, base, evolved)` triple:
/// feature projections, rescale ratios for every node and hidden layer, and
/// the pruning distance map. Build once, attribute many targets.
pub struct AttributionEngine<'a> {
    model: &'a GnnModel,
    g0: &'a Graph,
    g1: &'a Graph,
    trace0: &'a ForwardTrace,
    trace1: &'a ForwardTrace,
    /// Feature rows pushed through the first layer: `features · W(1)`.
    xw: Array2<f64>,
    /// `full_ratio[t-1][(v, j)]`: evolved-snapshot ReLU gate of neuron
    /// `(v, j)` after layer `t`, for `t` in `1..=T-1`.
    full_ratio: Vec<Array2<f64>>,
    /// `diff_ratio[t-1][(v, j)]`: `Δh / Δz` with gate fallback.
    diff_ratio: Vec<Array2<f64>>,
    dist_to_added: Vec<usize>,
}

impl<'a> AttributionEngine<'a> {
    pub fn new(
        model: &'a GnnModel,
        g0: &'a Graph,
        g1: &'a Graph,
        trace0: &'a ForwardTrace,
        trace1: &'a ForwardTrace,
    ) -> Result<Self> {
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
        if !std::sync::Arc::ptr_eq(&g0.features_arc(), &g1.features_arc())
            && g0.features() != g1.features()
        {
            return Err(Error::InvalidArg(
                "snapshots must share identical node features".into(),
            ));
        }
        if model.input_dim() != g1.feature_dim() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension vs model input",
                expected: model.input_dim(),
                found: g1.feature_dim(),
            });
        }
        for (trace, g, which) in [(trace0, g0, "base"), (trace1, g1, "evolved")] {
            if trace.num_nodes() != g.num_nodes()
                || trace.layer_count() != model.layer_count()
                || trace.num_classes() != model.num_classes()
            {
                return Err(Error::InvalidArg(format!(
                    "{which} trace does not match its snapshot and the model"
                )));
            }
        }

        let n = g1.num_nodes();
        let t_layers = model.layer_count();
        let xw = g1.features().dot(model.weight(1));
        let mut full_ratio = Vec::with_capacity(t_layers - 1);
        let mut diff_ratio = Vec::with_capacity(t_layers - 1);
        for t in 1..t_layers {
            let d = model.dim(t);
            let mut full = Array2::zeros((n, d));
            let mut diff = Array2::zeros((n, d));
            for v in 0..n {
                let z1 = trace1.pre_activation(t, v);
                let z0 = trace0.pre_activation(t, v);
                let h1 = trace1.activation(t, v);
                let h0 = trace0.activation(t, v);
                for j in 0..d {
                    // h = relu(z), so h/z is exactly the gate wherever it is
                    // defined, and the gate is also the |z| < eps fallback.
                    let gate = if z1[j] > 0.0 { 1.0 } else { 0.0 };
                    full[(v, j)] = gate;
                    let dz = z1[j] - z0[j];
                    diff[(v, j)] = if dz.abs() < RESCALE_EPS {
                        gate
                    } else {
                        (h1[j] - h0[j]) / dz
                    };
                }
            }
            full_ratio.push(full);
            diff_ratio.push(diff);
        }

        Ok(AttributionEngine {
            model,
            g0,
            g1,
            trace0,
            trace1,
            xw,
            full_ratio,
            diff_ratio,
            dist_to_added: added_distance_map(g0, g1),
        })
    }

    fn added(&self, u: NodeId, v: NodeId) -> bool {
        u != v && self.g1.has_edge(u, v) && !self.g0.has_edge(u, v)
    }

    /// Can a walk at `v` with `t` steps left still cross an added edge?
    fn can_still_cross(&self, v: NodeId, t: usize) -> bool {
        t >= 1 && self.dist_to_added[v] != usize::MAX && self.dist_to_added[v] <= t - 1
    }

    /// Attribute `target`'s logit change, refusing to enumerate more than
    /// [`DEFAULT_PATH_CAP`] changed paths.
    pub fn attribute(&self, target: NodeId) -> Result<PathAttribution> {
        self.attribute_with_cap(target, DEFAULT_PATH_CAP)
    }

    pub fn attribute_with_cap(&self, target: NodeId, cap: u64) -> Result<PathAttribution> {
        let start = Instant::now();
        let count = count_delta_paths(self.g0, self.g1, target, self.model.layer_count())?;
        if count > cap {
            return Err(Error::PathCapExceeded { target, cap });
        }

        let t_layers = self.model.layer_count();
        let mut collected: Vec<Collected> = Vec::with_capacity(count as usize);
        if t_layers == 1 {
            for &u in self.g1.nbrs(target) {
                if self.added(u, target) {
                    collected.push((vec![u, target], Some(1), self.xw.row(u).to_vec()));
                }
            }
        } else {
            let top = self.model.weight(t_layers);
            let mut above = vec![target];
            for &u in self.g1.nbrs(target) {
                let crossed = self.added(u, target).then_some(t_layers);
                if crossed.is_some() || self.can_still_cross(u, t_layers - 1) {
                    self.descend(u, t_layers - 1, crossed, top, &mut above, &mut collected);
                }
            }
        }

        let delta_z: Vec<f64> = self
            .trace1
            .logits_of(target)
            .iter()
            .zip(self.trace0.logits_of(target))
            .map(|(a, b)| a - b)
            .collect();
        assemble(collected, delta_z, start)
    }

    /// Recursive walk over tree vertex `(v, t)`, `t` in `1..=T-1`. `p_mat`
    /// is the suffix product pending above `v`'s rescaler; `above` holds the
    /// walk so far, root first; `crossed` carries the split layer once an
    /// added edge has been crossed.
    fn descend(
        &self,
        v: NodeId,
        t: usize,
        crossed: Option<usize>,
        p_mat: &Array2<f64>,
        above: &mut Vec<NodeId>,
        out: &mut Vec<Collected>,
    ) {
        above.push(v);
        let ratio = match crossed {
            Some(_) => self.full_ratio[t - 1].row(v),
            None => self.diff_ratio[t - 1].row(v),
        };
        let mut scaled = p_mat.to_owned();
        for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
            let r = ratio[i];
            if r != 1.0 {
                row.mapv_inplace(|x| x * r);
            }
        }

        if t == 1 {
            let mut row = vec![0.0; scaled.ncols()];
            for &u in self.g1.nbrs(v) {
                let split = match crossed {
                    Some(s) => s,
                    None if self.added(u, v) => 1,
                    None => continue,
                };
                let xr = self.xw.row(u);
                row_times_matrix(
                    xr.as_slice().expect("projection rows are contiguous"),
                    &scaled,
                    &mut row,
                );
                let mut nodes = Vec::with_capacity(above.len() + 1);
                nodes.push(u);
                nodes.extend(above.iter().rev());
                out.push((nodes, Some(split), row.clone()));
            }
        } else {
            let child_p = self.model.weight(t).dot(&scaled);
            for &u in self.g1.nbrs(v) {
                let child_crossed = crossed.or_else(|| self.added(u, v).then_some(t));
                if child_crossed.is_some() || self.can_still_cross(u, t - 1) {
                    self.descend(u, t - 1, child_crossed, &child_p, above, out);
                }
            }
        }
        above.pop();
    }
}

type Collected = (Vec<NodeId>, Option<usize>, Vec<f64>);

/// Sort the collected walks lexicographically, stack their rows in the same
/// order, and gate the result through [`ContributionMatrix::new`].
fn assemble(
    mut collected: Vec<Collected>,
    delta_z: Vec<f64>,
    start: Instant,
) -> Result<PathAttribution> {
    collected.sort_by(|a, b| a.0.cmp(&b.0));
    let c = delta_z.len();
    let mut matrix = Array2::zeros((collected.len(), c));
    let mut paths = Vec::with_capacity(collected.len());
    for (i, (nodes, split, row)) in collected.into_iter().enumerate() {
        for (j, x) in row.into_iter().enumerate() {
            matrix[(i, j)] = x;
        }
        paths.push(Path::new(nodes, split));
    }
    let contributions = ContributionMatrix::new(matrix, delta_z)?;
    let paths = PathSet::new(paths)?;
    Ok(PathAttribution {
        paths,
        contributions,
        build_time: start.elapsed(),
    })
}

/// Convenience wrapper: run both forwards and attribute one target.
pub fn attribute_changed_paths(
    model: &GnnModel,
    g0: &Graph,
    g1: &Graph,
    target: NodeId,
) -> Result<PathAttribution> {
    let trace0 = crate::gnn::forward(model, g0)?;
    let trace1 = crate::gnn::forward(model, g1)?;
    AttributionEngine::new(model, g0, g1, &trace0, &trace1)?.attribute(target)
}

/// Decompose a node's *absolute* logits over every walk of its computation
/// tree, i.e. attribute against a silent network instead of a base
/// snapshot: all rescalers are evolved-snapshot ReLU gates and the rows sum
/// to the logits themselves. This is a layer-wise relevance decomposition of
/// the evolved snapshot alone; it grows with the full neighbourhood product,
/// so a path cap applies.
pub fn zero_reference_attribution(
    model: &GnnModel,
    g1: &Graph,
    trace1: &ForwardTrace,
    target: NodeId,
) -> Result<PathAttribution> {
    let start = Instant::now();
    let t_layers = model.layer_count();
    if target >= g1.num_nodes() {
        return Err(Error::NodeOutOfRange {
            node: target,
            num_nodes: g1.num_nodes(),
        });
    }
    if trace1.num_nodes() != g1.num_nodes() || trace1.layer_count() != t_layers {
        return Err(Error::InvalidArg(
            "trace does not match the graph/model pair".into(),
        ));
    }

    // Count all walks first so oversized trees fail fast.
    let mut ways = vec![1u64; g1.num_nodes()];
    for _ in 0..t_layers {
        let mut next = vec![0u64; g1.num_nodes()];
        for (v, slot) in next.iter_mut().enumerate() {
            for &u in g1.nbrs(v) {
                *slot = slot.saturating_add(ways[u]);
            }
        }
        ways = next;
    }
    if ways[target] > DEFAULT_PATH_CAP {
        return Err(Error::PathCapExceeded {
            target,
            cap: DEFAULT_PATH_CAP,
        });
    }

    let xw = g1.features().dot(model.weight(1));
    let mut collected: Vec<Collected> = Vec::with_capacity(ways[target] as usize);
    if t_layers == 1 {
        for &u in g1.nbrs(target) {
            collected.push((vec![u, target], None, xw.row(u).to_vec()));
        }
    } else {
        let top = model.weight(t_layers);
        let mut above = vec![target];
        for &u in g1.nbrs(target) {
            zero_descend(model, g1, trace1, &xw, u, t_layers - 1, top, &mut above, &mut collected);
        }
    }
    let delta_z = trace1.logits_of(target).to_vec();
    assemble(collected, delta_z, start)
}

#[allow(clippy::too_many_arguments)]
fn zero_descend(
    model: &GnnModel,
    g1: &Graph,
    trace1: &ForwardTrace,
    xw: &Array2<f64>,
    v: NodeId,
    t: usize,
    p_mat: &Array2<f64>,
    above: &mut Vec<NodeId>,
    out: &mut Vec<Collected>,
) {
    above.push(v);
    let z1 = trace1.pre_activation(t, v);
    let mut scaled = p_mat.to_owned();
    for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
        if z1[i] <= 0.0 {
            row.fill(0.0);
        }
    }
    if t == 1 {
        let mut row = vec![0.0; scaled.ncols()];
        for &u in g1.nbrs(v) {
            let xr = xw.row(u);
            row_times_matrix(
                xr.as_slice().expect("projection rows are contiguous"),
                &scaled,
                &mut row,
            );
            let mut nodes = Vec::with_capacity(above.len() + 1);
            nodes.push(u);
            nodes.extend(above.iter().rev());
            out.push((nodes, None, row.clone()));
        }
    } else {
        let child_p = model.weight(t).dot(&scaled);
        for &u in g1.nbrs(v) {
            zero_descend(model, g1, trace1, xw, u, t - 1, &child_p, above, out);
        }
    }
    above.pop();
}

/// Evaluate one changed path's contribution in isolation, straight from the
/// product formula. Independent of [`AttributionEngine`]'s shared-suffix
/// walk, hence useful as its cross-check; assumes the path is a valid
/// changed path of the traced snapshot pair.
pub fn path_contribution(
    model: &GnnModel,
    trace0: &ForwardTrace,
    trace1: &ForwardTrace,
    path: &Path,
) -> Result<Vec<f64>> {
    let t_bar = path
        .split_layer()
        .ok_or_else(|| Error::InvalidArg(format!("path {path} carries no split layer")))?;
    contribution_along(model, Some(trace0), trace1, path, t_bar)
}

/// Evaluate one walk's zero-reference relevance: all rescalers are evolved
/// ReLU gates, no base snapshot involved.
pub fn zero_reference_contribution(
    model: &GnnModel,
    trace1: &ForwardTrace,
    path: &Path,
) -> Result<Vec<f64>> {
    // A split layer above T means every node is treated as below it: full
    // ratios everywhere.
    contribution_along(model, None, trace1, path, usize::MAX)
}

fn contribution_along(
    model: &GnnModel,
    trace0: Option<&ForwardTrace>,
    trace1: &ForwardTrace,
    path: &Path,
    t_bar: usize,
) -> Result<Vec<f64>> {
    let t_layers = model.layer_count();
    if path.steps() != t_layers {
        return Err(Error::LengthMismatch(t_layers + 1, path.nodes().len()));
    }
    let n = trace1.num_nodes();
    if let Some(&bad) = path.nodes().iter().find(|&&v| v >= n) {
        return Err(Error::NodeOutOfRange {
            node: bad,
            num_nodes: n,
        });
    }

    let mut cur: Vec<f64> = trace1.activation(0, path.leaf()).to_vec();
    for t in 1..=t_layers {
        let mut next = vec![0.0; model.dim(t)];
        row_times_matrix(&cur, model.weight(t), &mut next);
        if t < t_layers {
            let v = path.nodes()[t];
            let z1 = trace1.pre_activation(t, v);
            for (j, x) in next.iter_mut().enumerate() {
                let gate = if z1[j] > 0.0 { 1.0 } else { 0.0 };
                let r = if t < t_bar {
                    gate
                } else {
                    let trace0 = trace0.expect("difference mode needs a base trace");
                    let dz = z1[j] - trace0.pre_activation(t, v)[j];
                    if dz.abs() < RESCALE_EPS {
                        gate
                    } else {
                        (trace1.activation(t, v)[j] - trace0.activation(t, v)[j]) / dz
                    }
                };
                *x *= r;
            }
        }
        cur = next;
    }
    Ok(cur)
}
