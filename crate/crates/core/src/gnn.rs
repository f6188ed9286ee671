//! The message-passing model and its forward evaluations.
//!
//! The model is a T-layer graph network without biases. Layer `t` computes,
//! for every node `v`,
//!
//! ```text
//! z_v(t) = ( sum over u in N(v) of h_u(t-1) ) · W(t)
//! h_v(t) = relu(z_v(t))          for t < T
//! ```
//!
//! with `h(0)` the raw node features, element-wise sum as the only supported
//! aggregator, ReLU on all hidden layers and identity at the output layer.
//! `N(v)` always includes `v` itself (implicit self-loop). Class
//! distributions are softmax over the final logits.
//!
//! Aggregation iterates neighbours in ascending node id and neurons in
//! ascending index, so repeated runs produce bit-identical traces.
//!
//! [`forward_pruned`] re-evaluates the computation tree of a single root node
//! with a set of leaves removed, reusing cached activations for every subtree
//! that contains no removed leaf. This is the measurement tool used to judge
//! path selections: it answers "what would the root's logits be if these
//! exact information-flow paths fell silent" without linearising the network.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use crate::error::{read_to_string, write_string, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::paths::PathSet;

/// Weights of a T-layer sum-aggregation network, `weights[t-1]` being the
/// `d_{t-1} x d_t` matrix of layer `t`. There are no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    weights: Vec<Array2<f64>>,
}

impl GnnModel {
    /// Validate and wrap a weight stack: at least one layer, all entries
    /// finite, inner dimensions chained.
    pub fn new(weights: Vec<Array2<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArg("a model needs at least one layer".into()));
        }
        for pair in weights.windows(2) {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::DimensionMismatch {
                    what: "layer weight chaining",
                    expected: pair[0].ncols(),
                    found: pair[1].nrows(),
                });
            }
        }
        if !weights.iter().all(|w| w.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(GnnModel { weights })
    }

    /// Number of layers T.
    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    /// Output dimension = number of classes.
    pub fn num_classes(&self) -> usize {
        self.weights[self.weights.len() - 1].ncols()
    }

    /// Dimension of layer `t`'s output, `t` in `0..=T` (`t = 0` is the input).
    pub fn dim(&self, t: usize) -> usize {
        if t == 0 {
            self.input_dim()
        } else {
            self.weights[t - 1].ncols()
        }
    }

    /// Weight matrix of layer `t`, 1-based.
    pub fn weight(&self, t: usize) -> &Array2<f64> {
        &self.weights[t - 1]
    }

    /// Serialise to the text format: a header line `T d_0 d_1 ... d_T`,
    /// then each layer as `d_{t-1}` lines of `d_t` reals. Values are printed
    /// with 17 significant digits so a read-back is bit-exact.
    pub fn write_text(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::new();
        write!(out, "{}", self.layer_count()).unwrap();
        for t in 0..=self.layer_count() {
            write!(out, " {}", self.dim(t)).unwrap();
        }
        out.push('\n');
        for w in &self.weights {
            for row in w.rows() {
                let mut first = true;
                for x in row {
                    if !first {
                        out.push(' ');
                    }
                    write!(out, "{x:.16e}").unwrap();
                    first = false;
                }
                out.push('\n');
            }
        }
        write_string(path, &out)
    }

    /// Parse the text format written by [`GnnModel::write_text`]. Blank lines
    /// and `#` comments are ignored.
    pub fn read_text(path: &std::path::Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let path_str = path.display().to_string();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path_str.clone(),
            line,
            msg,
        };

        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (header_no, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty weight file".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|_| parse_err(header_no, format!("bad header token {tok:?}")))
            })
            .collect::<Result<_>>()?;
        if nums.len() < 2 || nums[0] == 0 || nums.len() != nums[0] + 2 {
            return Err(parse_err(
                header_no,
                format!("header must be `T d_0 .. d_T`, got {header:?}"),
            ));
        }
        let t_layers = nums[0];
        let dims = &nums[1..];

        let mut weights = Vec::with_capacity(t_layers);
        for t in 1..=t_layers {
            let (rows, cols) = (dims[t - 1], dims[t]);
            let mut w = Array2::zeros((rows, cols));
            for r in 0..rows {
                let (line_no, line) = lines.next().ok_or_else(|| {
                    parse_err(0, format!("unexpected end of file in layer {t} row {r}"))
                })?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>()
                            .map_err(|_| parse_err(line_no, format!("bad real {tok:?}")))
                    })
                    .collect::<Result<_>>()?;
                if vals.len() != cols {
                    return Err(parse_err(
                        line_no,
                        format!("expected {cols} values, found {}", vals.len()),
                    ));
                }
                for (c, v) in vals.into_iter().enumerate() {
                    w[(r, c)] = v;
                }
            }
            weights.push(w);
        }
        if let Some((line_no, _)) = lines.next() {
            return Err(parse_err(line_no, "trailing data after last layer".into()));
        }
        GnnModel::new(weights)
    }
}

/// All intermediate state of one forward pass: pre-activations, hidden
/// activations, final logits and class distributions for every node.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    t_layers: usize,
    /// `h(0)`: shared handle on the graph's feature matrix.
    features: Arc<Array2<f64>>,
    /// `pre[t-1]` holds `z(t)` for `t` in `1..=T`.
    pre: Vec<Array2<f64>>,
    /// `act[t-1]` holds `h(t)` for `t` in `1..=T-1`.
    act: Vec<Array2<f64>>,
    /// Softmax of the final logits, row per node.
    probs: Array2<f64>,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.t_layers
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Final logits `z(T)`, row per node.
    pub fn logits(&self) -> &Array2<f64> {
        &self.pre[self.t_layers - 1]
    }

    pub fn logits_of(&self, v: NodeId) -> ArrayView1<'_, f64> {
        self.logits().row(v)
    }

    /// Class distribution of node `v`.
    pub fn probs_of(&self, v: NodeId) -> ArrayView1<'_, f64> {
        self.probs.row(v)
    }

    /// Pre-activation `z_v(t)`, `t` in `1..=T`.
    pub fn pre_activation(&self, t: usize, v: NodeId) -> ArrayView1<'_, f64> {
        self.pre[t - 1].row(v)
    }

    /// Activation `h_v(t)`, `t` in `0..=T-1`; `t = 0` is the feature row.
    pub fn activation(&self, t: usize, v: NodeId) -> ArrayView1<'_, f64> {
        if t == 0 {
            self.features.row(v)
        } else {
            self.act[t - 1].row(v)
        }
    }
}

/// `out[j] = sum_u s[u] * w[u][j]`, accumulated over ascending `u` so the
/// summation order is identical everywhere it is used.
pub(crate) fn row_times_matrix(s: &[f64], w: &Array2<f64>, out: &mut [f64]) {
    debug_assert_eq!(s.len(), w.nrows());
    debug_assert_eq!(out.len(), w.ncols());
    out.fill(0.0);
    for (u, &su) in s.iter().enumerate() {
        if su == 0.0 {
            continue;
        }
        let row = w.row(u);
        let row = row.as_slice().expect("weight rows are contiguous");
        for (o, &wuj) in out.iter_mut().zip(row) {
            *o += su * wuj;
        }
    }
}

/// Evaluate the network on a whole snapshot.
///
/// Errors when the graph's feature dimension does not match the model's
/// input dimension.
pub fn forward(model: &GnnModel, g: &Graph) -> Result<ForwardTrace> {
    if g.feature_dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension vs model input",
            expected: model.input_dim(),
            found: g.feature_dim(),
        });
    }
    let n = g.num_nodes();
    let t_layers = model.layer_count();
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(t_layers);
    let mut act: Vec<Array2<f64>> = Vec::with_capacity(t_layers.saturating_sub(1));

    for t in 1..=t_layers {
        let d_in = model.dim(t - 1);
        // Aggregate neighbours in ascending node id, neurons in ascending
        // index: the fixed order keeps traces reproducible bit-for-bit.
        let mut agg = Array2::zeros((n, d_in));
        for v in 0..n {
            let mut row = agg.row_mut(v);
            let row = row.as_slice_mut().expect("agg rows are contiguous");
            for &u in g.nbrs(v) {
                let h_u = if t == 1 {
                    g.features().row(u)
                } else {
                    act[t - 2].row(u)
                };
                let h_u = h_u.as_slice().expect("activation rows are contiguous");
                for (o, &x) in row.iter_mut().zip(h_u) {
                    *o += x;
                }
            }
        }
        let z = agg.dot(model.weight(t));
        if t < t_layers {
            act.push(z.mapv(|x| x.max(0.0)));
        }
        pre.push(z);
    }

    let logits = &pre[t_layers - 1];
    let mut probs = Array2::zeros(logits.raw_dim());
    for (v, row) in logits.rows().into_iter().enumerate() {
        let p = softmax(row.as_slice().expect("logit rows are contiguous"));
        probs.row_mut(v).iter_mut().zip(&p).for_each(|(o, &x)| *o = x);
    }

    Ok(ForwardTrace {
        t_layers,
        features: g.features_arc(),
        pre,
        act,
        probs,
    })
}

/// Numerically stable softmax: the maximum is subtracted before
/// exponentiation, so even logits in the hundreds do not overflow.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    assert!(!z.is_empty(), "softmax of an empty vector");
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log(sum_j exp(z_j))` with max-subtraction.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    assert!(!z.is_empty(), "log_sum_exp of an empty vector");
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Kullback-Leibler divergence `KL(p || q)` in nats, with `0·ln 0 = 0`.
///
/// `q` is expected to be a softmax output (strictly positive up to floating
/// underflow); if an entry of `q` underflowed to zero while `p` is positive
/// there, the result is infinite.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// `KL(softmax(z1) || softmax(z0))` computed directly from logits:
///
/// ```text
/// sum_j softmax(z1)_j · (z1_j - z0_j)  -  [lse(z1) - lse(z0)]
/// ```
///
/// This is the form the rest of the crate reasons about: the first term is
/// the expected logit change, the second the log partition ratio. It agrees
/// with [`kl_divergence`] of the two softmaxes to floating-point accuracy
/// and stays finite for extreme logits.
pub fn kl_via_logits(z1: &[f64], z0: &[f64]) -> f64 {
    assert_eq!(z1.len(), z0.len(), "logit vectors must have equal length");
    let p1 = softmax(z1);
    let expected_shift: f64 = p1
        .iter()
        .zip(z1.iter().zip(z0))
        .map(|(&p, (&a, &b))| p * (a - b))
        .sum();
    expected_shift - (log_sum_exp(z1) - log_sum_exp(z0))
}

/// Outcome of a pruned computation-tree evaluation.
#[derive(Debug, Clone)]
pub struct PrunedForward {
    /// Root logits with the removed leaves silenced.
    pub logits: Vec<f64>,
    /// Tree vertices whose value had to be recomputed; bounded by
    /// `T · |removed|` (every removed leaf touches one vertex per layer).
    pub recomputed_vertices: usize,
}

#[derive(Default)]
struct Trie {
    children: BTreeMap<NodeId, Trie>,
}

/// Root logits of `root`'s depth-T computation tree over `g1` with the given
/// leaf paths removed, plus a recomputation counter. `trace1` must be the
/// forward trace of `(model, g1)`; subtrees without removed leaves reuse its
/// cached activations, so the cost scales with the removal set, not the
/// graph.
pub fn forward_pruned_counted(
    model: &GnnModel,
    g1: &Graph,
    trace1: &ForwardTrace,
    root: NodeId,
    removed: &PathSet,
) -> Result<PrunedForward> {
    let t_layers = model.layer_count();
    if root >= g1.num_nodes() {
        return Err(Error::NodeOutOfRange {
            node: root,
            num_nodes: g1.num_nodes(),
        });
    }
    if trace1.num_nodes() != g1.num_nodes() || trace1.layer_count() != t_layers {
        return Err(Error::InvalidArg(
            "trace does not match the graph/model pair".into(),
        ));
    }

    // Index the removed paths as a trie from the root end: depth k holds the
    // node at layer T-k, so depth T identifies the leaf to silence.
    let mut trie = Trie::default();
    for path in removed.iter() {
        let nodes = path.nodes();
        if nodes.len() != t_layers + 1
            || nodes[t_layers] != root
            || nodes.windows(2).any(|w| !g1.has_edge(w[0], w[1]))
        {
            return Err(Error::PathNotInGraph(path.to_string()));
        }
        let mut cursor = &mut trie;
        for &v in nodes.iter().rev().skip(1) {
            cursor = cursor.children.entry(v).or_default();
        }
    }

    if trie.children.is_empty() {
        // Nothing removed: the root logits are exactly the cached ones.
        return Ok(PrunedForward {
            logits: trace1.logits_of(root).to_vec(),
            recomputed_vertices: 0,
        });
    }

    let mut recomputed = 0usize;
    let logits = eval_pruned(model, g1, trace1, root, t_layers, &trie, &mut recomputed);
    Ok(PrunedForward {
        logits,
        recomputed_vertices: recomputed,
    })
}

/// [`forward_pruned_counted`] without the counter.
pub fn forward_pruned(
    model: &GnnModel,
    g1: &Graph,
    trace1: &ForwardTrace,
    root: NodeId,
    removed: &PathSet,
) -> Result<Vec<f64>> {
    forward_pruned_counted(model, g1, trace1, root, removed).map(|p| p.logits)
}

/// Recompute the tree vertex `(v, t)` whose subtree contains removed leaves.
/// Children without a trie entry contribute their cached graph-level value;
/// children at layer 0 with an entry are removed leaves and are skipped.
fn eval_pruned(
    model: &GnnModel,
    g1: &Graph,
    trace1: &ForwardTrace,
    v: NodeId,
    t: usize,
    trie: &Trie,
    recomputed: &mut usize,
) -> Vec<f64> {
    let d_in = model.dim(t - 1);
    let mut agg = vec![0.0; d_in];
    for &u in g1.nbrs(v) {
        match trie.children.get(&u) {
            None => {
                let h_u = trace1.activation(t - 1, u);
                let h_u = h_u.as_slice().expect("activation rows are contiguous");
                for (o, &x) in agg.iter_mut().zip(h_u) {
                    *o += x;
                }
            }
            Some(_) if t == 1 => {
                // Removed leaf: its feature row is silenced entirely.
            }
            Some(child) => {
                let h_u = eval_pruned(model, g1, trace1, u, t - 1, child, recomputed);
                for (o, &x) in agg.iter_mut().zip(&h_u) {
                    *o += x;
                }
            }
        }
    }
    let mut z = vec![0.0; model.dim(t)];
    row_times_matrix(&agg, model.weight(t), &mut z);
    *recomputed += 1;
    if t < model.layer_count() {
        for x in &mut z {
            *x = x.max(0.0);
        }
    }
    z
}
