//! Choosing the `n` paths that best explain a distribution change.
//!
//! Given the contribution matrix `C` of a target's changed paths, the best
//! size-`n` explanation minimizes the divergence between the evolved
//! distribution and the one reconstructed from the base logits plus the
//! chosen contributions. Over a 0/1 indicator that is combinatorial, so the
//! flagship method relaxes the indicator to `x ∈ [0,1]^m, Σx = n` and
//! minimizes the smooth convex objective
//!
//! ```text
//! f(x) = -Σ_j pr1_j·(Cᵀx)_j + logsumexp(z0 + Cᵀx)
//! ```
//!
//! (equal, up to an additive constant, to `KL(pr1 ‖ softmax(z0 + Cᵀx))`)
//! by projected gradient descent on the capped simplex, then rounds to a
//! subset. Because the optimum can be a face rather than a vertex, rounding
//! considers both the top-`n` coordinates of `x*` and a greedy forward pass
//! over the exact subset objective, keeping whichever subset scores lower.
//!
//! The remaining methods are single-pass rankings: a linearised objective,
//! the all-class contribution sum, a two-class contribution difference, an
//! edge-gate gradient magnitude, and a zero-reference relevance score.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::attribution::{zero_reference_contribution, ContributionMatrix, PathAttribution};
use crate::error::{Error, Result};
use crate::gnn::{log_sum_exp, softmax, ForwardTrace, GnnModel};
use crate::graph::{Graph, NodeId};
use crate::paths::PathSet;

/// Stop projected gradient descent once `‖x − P(x − ∇f)‖₂` drops below this.
pub const PGD_TOLERANCE: f64 = 1e-6;
/// Hard iteration cap; hitting it yields a non-converged (but valid) result.
pub const PGD_MAX_ITERATIONS: usize = 5000;
/// Armijo sufficient-decrease constant for the backtracking line search.
pub const ARMIJO_C: f64 = 1e-4;
/// Feasibility tolerance of the capped-simplex projection.
pub const PROJECTION_TOL: f64 = 1e-8;

/// The selection methods the crate knows, by their CLI identifiers.
/// Ordering follows declaration order and fixes report sort order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Convex,
    Linear,
    Topk,
    DeepLift,
    Grad,
    Lrp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Convex,
        Method::Linear,
        Method::Topk,
        Method::DeepLift,
        Method::Grad,
        Method::Lrp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Convex => "convex",
            Method::Linear => "linear",
            Method::Topk => "topk",
            Method::DeepLift => "deeplift",
            Method::Grad => "grad",
            Method::Lrp => "lrp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidArg(format!(
                    "unknown method {s:?}; expected one of convex|linear|topk|deeplift|grad|lrp"
                ))
            })
    }
}

/// One subset-selection instance: the contribution matrix, the base logits,
/// the evolved distribution, and the subset size.
pub struct SelectionProblem<'a> {
    contributions: &'a ContributionMatrix,
    z0: Vec<f64>,
    pr1: Vec<f64>,
    n: usize,
}

impl<'a> SelectionProblem<'a> {
    pub fn new(
        contributions: &'a ContributionMatrix,
        z0: &[f64],
        pr1: &[f64],
        n: usize,
    ) -> Result<Self> {
        let c = contributions.num_classes();
        if z0.len() != c {
            return Err(Error::LengthMismatch(c, z0.len()));
        }
        if pr1.len() != c {
            return Err(Error::LengthMismatch(c, pr1.len()));
        }
        if !z0.iter().all(|x| x.is_finite()) || !pr1.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("selection problem inputs"));
        }
        let total: f64 = pr1.iter().sum();
        if pr1.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArg(
                "pr1 must be a probability distribution".into(),
            ));
        }
        let m = contributions.num_paths();
        if n == 0 || n > m {
            return Err(Error::InvalidArg(format!(
                "subset size {n} outside 1..={m}"
            )));
        }
        Ok(SelectionProblem {
            contributions,
            z0: z0.to_vec(),
            pr1: pr1.to_vec(),
            n,
        })
    }

    /// Build from the two logit vectors, taking `pr1 = softmax(z1)`.
    pub fn from_logits(
        contributions: &'a ContributionMatrix,
        z0: &[f64],
        z1: &[f64],
        n: usize,
    ) -> Result<Self> {
        if z1.len() != contributions.num_classes() {
            return Err(Error::LengthMismatch(contributions.num_classes(), z1.len()));
        }
        if !z1.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("selection problem inputs"));
        }
        Self::new(contributions, z0, &softmax(z1), n)
    }

    pub fn num_paths(&self) -> usize {
        self.contributions.num_paths()
    }

    pub fn num_classes(&self) -> usize {
        self.contributions.num_classes()
    }

    pub fn subset_size(&self) -> usize {
        self.n
    }

    pub fn contributions(&self) -> &ContributionMatrix {
        self.contributions
    }

    /// `z0 + Cᵀx`, accumulated over ascending path index.
    fn shifted_logits(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.num_paths());
        let mut s = self.z0.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (sj, &cij) in s.iter_mut().zip(self.contributions.row(i)) {
                *sj += xi * cij;
            }
        }
        s
    }

    fn objective_of_shifted(&self, s: &[f64]) -> f64 {
        let expected_shift: f64 = self
            .pr1
            .iter()
            .zip(s.iter().zip(&self.z0))
            .map(|(&p, (&sj, &z0j))| p * (sj - z0j))
            .sum();
        log_sum_exp(s) - expected_shift
    }

    /// `f(x) = -Σ_j pr1_j·(Cᵀx)_j + logsumexp(z0 + Cᵀx)`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.objective_of_shifted(&self.shifted_logits(x))
    }

    /// `∂f/∂x_p = Σ_j (softmax(z0 + Cᵀx)_j − pr1_j)·C_{p,j}`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let q = softmax(&self.shifted_logits(x));
        let resid: Vec<f64> = q.iter().zip(&self.pr1).map(|(&a, &b)| a - b).collect();
        (0..self.num_paths())
            .map(|i| {
                self.contributions
                    .row(i)
                    .iter()
                    .zip(&resid)
                    .map(|(&cij, &r)| cij * r)
                    .sum()
            })
            .collect()
    }

    /// Objective of the 0/1 indicator of `indices`.
    pub fn objective_of_subset(&self, indices: &[usize]) -> f64 {
        let mut s = self.z0.clone();
        for &i in indices {
            for (sj, &cij) in s.iter_mut().zip(self.contributions.row(i)) {
                *sj += cij;
            }
        }
        self.objective_of_shifted(&s)
    }
}

/// What a selection method produced: the relaxed solution (or the subset
/// indicator for one-shot rankers), the chosen path indices in ascending
/// order, and the solver's objective trace.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub method: Method,
    /// Relaxed solution in `[0,1]^m` with `Σx = n`; for ranking baselines
    /// this is the indicator of `chosen`.
    pub x_star: Vec<f64>,
    /// The `n` selected path indices, ascending.
    pub chosen: Vec<usize>,
    /// Objective value after each accepted solver step (empty for rankers
    /// that never evaluate the objective).
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Set when the method's score was structurally uninformative (for the
    /// two-class difference ranker: both classes identical).
    pub degenerate: bool,
}

fn indicator(m: usize, chosen: &[usize]) -> Vec<f64> {
    let mut x = vec![0.0; m];
    for &i in chosen {
        x[i] = 1.0;
    }
    x
}

/// Indices of the `n` largest scores, descending by score with ties broken
/// by ascending index; returned ascending.
fn top_n_by_score(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut top = idx[..n].to_vec();
    top.sort_unstable();
    top
}

/// Euclidean projection onto `{x ∈ [0,1]^m : Σx = n}` by bisection on the
/// shift λ in `x_p = clip(v_p − λ, 0, 1)`. Feasible within
/// [`PROJECTION_TOL`]; a `v` that is already feasible comes back unchanged.
pub fn project_capped_simplex(v: &[f64], n: f64) -> Result<Vec<f64>> {
    let m = v.len();
    if !n.is_finite() || n < 0.0 || n > m as f64 {
        return Err(Error::InvalidArg(format!(
            "projection budget {n} outside [0, {m}]"
        )));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    if m == 0 {
        return Ok(vec![]);
    }
    let sum: f64 = v.iter().sum();
    if v.iter().all(|&x| (0.0..=1.0).contains(&x)) && (sum - n).abs() <= 1e-12 {
        return Ok(v.to_vec());
    }

    // Σ_p clip(v_p − λ, 0, 1) decreases from m at λ = min(v)−1 to 0 at
    // λ = max(v); bisect until the interval is far below the feasibility
    // tolerance divided by the m-Lipschitz slope.
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let clipped_sum = |lambda: f64| -> f64 {
        v.iter().map(|&x| (x - lambda).clamp(0.0, 1.0)).sum()
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clipped_sum(mid) > n {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let x: Vec<f64> = v.iter().map(|&t| (t - lambda).clamp(0.0, 1.0)).collect();
    let achieved: f64 = x.iter().sum();
    if (achieved - n).abs() > PROJECTION_TOL {
        return Err(Error::InvalidArg(format!(
            "projection did not reach feasibility: |{achieved} - {n}| > {PROJECTION_TOL}"
        )));
    }
    Ok(x)
}

/// Greedy forward selection on the exact subset objective: `n` rounds, each
/// adding the path whose inclusion lowers the objective the most (ties by
/// ascending index). Used as the second rounding candidate.
fn greedy_forward(problem: &SelectionProblem) -> Vec<usize> {
    let m = problem.num_paths();
    let mut shifted = problem.z0.clone();
    let mut chosen = Vec::with_capacity(problem.n);
    let mut taken = vec![false; m];
    let mut trial = vec![0.0; problem.num_classes()];
    for _ in 0..problem.n {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if taken[i] {
                continue;
            }
            for ((t, &s), &cij) in trial.iter_mut().zip(&shifted).zip(problem.contributions.row(i))
            {
                *t = s + cij;
            }
            let f = problem.objective_of_shifted(&trial);
            if best.is_none_or(|(_, fb)| f < fb) {
                best = Some((i, f));
            }
        }
        let (i, _) = best.expect("n <= m leaves a candidate");
        taken[i] = true;
        for (s, &cij) in shifted.iter_mut().zip(problem.contributions.row(i)) {
            *s += cij;
        }
        chosen.push(i);
    }
    chosen.sort_unstable();
    chosen
}

/// Minimize the relaxed objective by projected gradient descent with an
/// Armijo backtracking line search (step carried over and doubled between
/// iterations), then round to a subset.
///
/// Rounding evaluates two candidates — the top-`n` coordinates of `x*` and
/// a greedy forward selection — on the exact subset objective and keeps the
/// better one. When the relaxed optimum is a single vertex both agree; when
/// it is a face (many indicators equally represented by `x*`), the greedy
/// pass resolves the ambiguity by actual objective value instead of by
/// fractional coordinate noise.
///
/// Hitting the iteration cap returns the best iterate with `converged:
/// false` rather than an error.
pub fn solve_convex(problem: &SelectionProblem) -> Result<SelectionResult> {
    let m = problem.num_paths();
    let n = problem.n;
    let mut x = vec![n as f64 / m as f64; m];
    let mut fx = problem.objective(&x);
    let mut trace = vec![fx];
    let mut alpha = 1.0_f64;
    let mut converged = false;

    for _ in 0..PGD_MAX_ITERATIONS {
        let g = problem.gradient(&x);
        let probe_point: Vec<f64> = x.iter().zip(&g).map(|(&xi, &gi)| xi - gi).collect();
        let probe = project_capped_simplex(&probe_point, n as f64)?;
        let pg_norm: f64 = x
            .iter()
            .zip(&probe)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if pg_norm < PGD_TOLERANCE {
            converged = true;
            break;
        }

        alpha = (alpha * 2.0).min(1e12);
        let mut accepted = false;
        while alpha >= 1e-18 {
            let step: Vec<f64> = x
                .iter()
                .zip(&g)
                .map(|(&xi, &gi)| xi - alpha * gi)
                .collect();
            let cand = project_capped_simplex(&step, n as f64)?;
            let f_cand = problem.objective(&cand);
            let decrease: f64 = g
                .iter()
                .zip(cand.iter().zip(&x))
                .map(|(&gi, (&ci, &xi))| gi * (ci - xi))
                .sum();
            if f_cand <= fx + ARMIJO_C * decrease {
                x = cand;
                fx = f_cand;
                trace.push(fx);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // The line search underflowed: no representable step decreases
            // f, so the iterate is numerically stationary.
            break;
        }
    }

    let by_coordinate = top_n_by_score(&x, n);
    let by_greedy = greedy_forward(problem);
    let chosen = if problem.objective_of_subset(&by_greedy)
        < problem.objective_of_subset(&by_coordinate)
    {
        by_greedy
    } else {
        by_coordinate
    };

    Ok(SelectionResult {
        method: Method::Convex,
        x_star: x,
        chosen,
        objective_trace: trace,
        converged,
        degenerate: false,
    })
}

/// Drop the log-partition term and solve the remaining linear program
/// exactly: its vertex optima are precisely the `n` paths with the largest
/// `Σ_j pr1_j·C_{p,j}`.
pub fn solve_linear(problem: &SelectionProblem) -> Result<SelectionResult> {
    let scores: Vec<f64> = (0..problem.num_paths())
        .map(|i| {
            problem
                .contributions
                .row(i)
                .iter()
                .zip(&problem.pr1)
                .map(|(&cij, &p)| cij * p)
                .sum()
        })
        .collect();
    let chosen = top_n_by_score(&scores, problem.n);
    Ok(SelectionResult {
        method: Method::Linear,
        x_star: indicator(problem.num_paths(), &chosen),
        chosen,
        objective_trace: vec![],
        converged: true,
        degenerate: false,
    })
}

/// Rank by the all-class contribution sum `Σ_j C_{p,j}` — signed by
/// default, absolute behind the flag.
pub fn rank_topk(problem: &SelectionProblem, absolute: bool) -> Result<SelectionResult> {
    let scores: Vec<f64> = (0..problem.num_paths())
        .map(|i| {
            problem
                .contributions
                .row(i)
                .iter()
                .map(|&cij| if absolute { cij.abs() } else { cij })
                .sum()
        })
        .collect();
    let chosen = top_n_by_score(&scores, problem.n);
    Ok(SelectionResult {
        method: Method::Topk,
        x_star: indicator(problem.num_paths(), &chosen),
        chosen,
        objective_trace: vec![],
        converged: true,
        degenerate: false,
    })
}

/// Rank by the contribution difference between the evolved snapshot's
/// predicted class and the base snapshot's: `C_{p,new} − C_{p,old}`. When
/// the prediction did not change the score is identically zero; that is
/// allowed but flagged `degenerate`.
pub fn rank_deeplift(
    problem: &SelectionProblem,
    old_class: usize,
    new_class: usize,
) -> Result<SelectionResult> {
    let c = problem.num_classes();
    if old_class >= c || new_class >= c {
        return Err(Error::InvalidArg(format!(
            "class pair ({old_class}, {new_class}) outside 0..{c}"
        )));
    }
    let scores: Vec<f64> = (0..problem.num_paths())
        .map(|i| {
            let row = problem.contributions.row(i);
            row[new_class] - row[old_class]
        })
        .collect();
    let chosen = top_n_by_score(&scores, problem.n);
    Ok(SelectionResult {
        method: Method::DeepLift,
        x_star: indicator(problem.num_paths(), &chosen),
        chosen,
        objective_trace: vec![],
        converged: true,
        degenerate: old_class == new_class,
    })
}

/// For every path, the sum over its steps of `|∂z_class(target)/∂gate_e|`,
/// where each aggregation edge carries a multiplicative gate fixed at 1 and
/// the derivative is taken by reverse-mode differentiation on the evolved
/// snapshot.
pub fn gate_gradient_scores(
    model: &GnnModel,
    g1: &Graph,
    trace1: &ForwardTrace,
    target: NodeId,
    class: usize,
    paths: &PathSet,
) -> Result<Vec<f64>> {
    let t_layers = model.layer_count();
    let n = g1.num_nodes();
    if target >= n {
        return Err(Error::NodeOutOfRange {
            node: target,
            num_nodes: n,
        });
    }
    if class >= model.num_classes() {
        return Err(Error::InvalidArg(format!(
            "class {class} outside 0..{}",
            model.num_classes()
        )));
    }
    if let Some(root) = paths.root() {
        if root != target {
            return Err(Error::InvalidArg(format!(
                "paths are rooted at {root}, not at target {target}"
            )));
        }
    }
    if paths.iter().any(|p| p.steps() != t_layers) {
        return Err(Error::InvalidArg(
            "path length does not match the model depth".into(),
        ));
    }

    // msgs[t-1][u] = h_u(t-1)·W(t): the message a gate at layer t scales.
    let mut msgs: Vec<Array2<f64>> = Vec::with_capacity(t_layers);
    for t in 1..=t_layers {
        let h_prev = if t == 1 {
            g1.features().clone()
        } else {
            let d = model.dim(t - 1);
            let mut h = Array2::zeros((n, d));
            for v in 0..n {
                h.row_mut(v).assign(&trace1.activation(t - 1, v));
            }
            h
        };
        msgs.push(h_prev.dot(model.weight(t)));
    }

    // zbar[t-1][v] = ∂z_class(target)/∂z_v(t), built top-down.
    let mut zbar: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); t_layers];
    let mut top = Array2::zeros((n, model.num_classes()));
    top[(target, class)] = 1.0;
    zbar[t_layers - 1] = top;
    for t in (1..t_layers).rev() {
        let propagated = zbar[t].dot(&model.weight(t + 1).t());
        let mut hbar = Array2::zeros((n, model.dim(t)));
        for v in 0..n {
            let mut row = hbar.row_mut(v);
            for &w in g1.nbrs(v) {
                row += &propagated.row(w);
            }
        }
        for v in 0..n {
            let z = trace1.pre_activation(t, v);
            for j in 0..model.dim(t) {
                if z[j] <= 0.0 {
                    hbar[(v, j)] = 0.0;
                }
            }
        }
        zbar[t - 1] = hbar;
    }

    let scores = paths
        .iter()
        .map(|p| {
            (1..=t_layers)
                .map(|t| {
                    let v = p.nodes()[t];
                    let u = p.nodes()[t - 1];
                    let grad: f64 = zbar[t - 1]
                        .row(v)
                        .iter()
                        .zip(msgs[t - 1].row(u))
                        .map(|(&a, &b)| a * b)
                        .sum();
                    grad.abs()
                })
                .sum()
        })
        .collect();
    Ok(scores)
}

/// Rank the changed paths by summed absolute edge-gate gradients of the
/// evolved snapshot's predicted class at the target.
pub fn rank_grad(
    model: &GnnModel,
    g1: &Graph,
    trace1: &ForwardTrace,
    target: NodeId,
    paths: &PathSet,
    n: usize,
) -> Result<SelectionResult> {
    let m = paths.len();
    if n == 0 || n > m {
        return Err(Error::InvalidArg(format!(
            "subset size {n} outside 1..={m}"
        )));
    }
    let class = argmax(trace1.logits_of(target).iter().cloned());
    let scores = gate_gradient_scores(model, g1, trace1, target, class, paths)?;
    let chosen = top_n_by_score(&scores, n);
    Ok(SelectionResult {
        method: Method::Grad,
        x_star: indicator(m, &chosen),
        chosen,
        objective_trace: vec![],
        converged: true,
        degenerate: false,
    })
}

/// Rank the changed paths by their signed zero-reference relevance for the
/// evolved snapshot's predicted class at the target.
pub fn rank_lrp(
    model: &GnnModel,
    trace1: &ForwardTrace,
    target: NodeId,
    paths: &PathSet,
    n: usize,
) -> Result<SelectionResult> {
    let m = paths.len();
    if n == 0 || n > m {
        return Err(Error::InvalidArg(format!(
            "subset size {n} outside 1..={m}"
        )));
    }
    if let Some(root) = paths.root() {
        if root != target {
            return Err(Error::InvalidArg(format!(
                "paths are rooted at {root}, not at target {target}"
            )));
        }
    }
    let class = argmax(trace1.logits_of(target).iter().cloned());
    let scores: Vec<f64> = paths
        .iter()
        .map(|p| Ok(zero_reference_contribution(model, trace1, p)?[class]))
        .collect::<Result<_>>()?;
    let chosen = top_n_by_score(&scores, n);
    Ok(SelectionResult {
        method: Method::Lrp,
        x_star: indicator(m, &chosen),
        chosen,
        objective_trace: vec![],
        converged: true,
        degenerate: false,
    })
}

/// Lowest index of the maximum.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Everything the method dispatcher needs to run any selection method on
/// one attributed target.
pub struct SelectionContext<'a> {
    pub model: &'a GnnModel,
    pub g1: &'a Graph,
    pub trace0: &'a ForwardTrace,
    pub trace1: &'a ForwardTrace,
    pub target: NodeId,
    pub attribution: &'a PathAttribution,
    /// Rank the all-class sum by absolute value instead of signed.
    pub topk_absolute: bool,
}

impl SelectionContext<'_> {
    /// Run one method for a subset of size `n`.
    pub fn select(&self, method: Method, n: usize) -> Result<SelectionResult> {
        let z0 = self.trace0.logits_of(self.target);
        let z1 = self.trace1.logits_of(self.target);
        let problem = SelectionProblem::from_logits(
            &self.attribution.contributions,
            z0.as_slice().expect("logit rows are contiguous"),
            z1.as_slice().expect("logit rows are contiguous"),
            n,
        )?;
        match method {
            Method::Convex => solve_convex(&problem),
            Method::Linear => solve_linear(&problem),
            Method::Topk => rank_topk(&problem, self.topk_absolute),
            Method::DeepLift => {
                let old_class = argmax(z0.iter().cloned());
                let new_class = argmax(z1.iter().cloned());
                rank_deeplift(&problem, old_class, new_class)
            }
            Method::Grad => rank_grad(
                self.model,
                self.g1,
                self.trace1,
                self.target,
                &self.attribution.paths,
                n,
            ),
            Method::Lrp => rank_lrp(
                self.model,
                self.trace1,
                self.target,
                &self.attribution.paths,
                n,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::attribute_changed_paths;
    use crate::gnn::forward;
    use crate::graph::{apply_delta, EdgeDelta, Graph};
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[[f64; 2]], delta_z: [f64; 2]) -> ContributionMatrix {
        let m = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        ContributionMatrix::new(m, delta_z.to_vec()).unwrap()
    }

    /// The motivating instance: three paths contributing (−9, 10, 1) to the
    /// changed class and nothing to the other, base logits zero, n = 1.
    fn face_instance() -> ContributionMatrix {
        matrix(&[[-9.0, 0.0], [10.0, 0.0], [1.0, 0.0]], [2.0, 0.0])
    }

    #[test]
    fn method_names_round_trip() {
        for method in Method::ALL {
            assert_eq!(method.name().parse::<Method>().unwrap(), method);
        }
        assert!("magic".parse::<Method>().is_err());
    }

    #[test]
    fn projection_matches_hand_examples() {
        let p = project_capped_simplex(&[10.0, 10.0], 1.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9, "got {p:?}");
        let p = project_capped_simplex(&[0.9, 0.5, 0.1], 1.0).unwrap();
        for (got, want) in p.iter().zip([0.7, 0.3, 0.0]) {
            assert!((got - want).abs() < 1e-9, "got {p:?}");
        }
    }

    #[test]
    fn projection_is_idempotent_on_feasible_points() {
        let v = vec![0.25, 0.5, 0.25];
        assert_eq!(project_capped_simplex(&v, 1.0).unwrap(), v);
    }

    #[test]
    fn projection_handles_budget_extremes_and_rejects_bad_budgets() {
        let zeros = project_capped_simplex(&[5.0, -3.0], 0.0).unwrap();
        assert!(zeros.iter().all(|&x| x.abs() < 1e-9));
        let ones = project_capped_simplex(&[5.0, -3.0], 2.0).unwrap();
        assert!(ones.iter().all(|&x| (x - 1.0).abs() < 1e-9));
        assert!(project_capped_simplex(&[1.0], 2.0).is_err());
        assert!(project_capped_simplex(&[1.0], -0.1).is_err());
    }

    #[test]
    fn gradient_is_zero_at_full_selection_and_for_zero_contributions() {
        let cm = face_instance();
        let problem = SelectionProblem::from_logits(&cm, &[0.0, 0.0], &[2.0, 0.0], 1).unwrap();
        // By completeness softmax(z0 + Cᵀ1) equals the evolved distribution.
        let g = problem.gradient(&vec![1.0; 3]);
        assert!(g.iter().all(|x| x.abs() < 1e-9), "got {g:?}");

        let zero = matrix(&[[0.0, 0.0], [0.0, 0.0]], [0.0, 0.0]);
        let problem = SelectionProblem::from_logits(&zero, &[0.3, -0.2], &[0.3, -0.2], 1).unwrap();
        let g = problem.gradient(&[0.5, 0.5]);
        assert!(g.iter().all(|x| x.abs() < 1e-12), "got {g:?}");
    }

    #[test]
    fn convex_selection_resolves_the_degenerate_face() {
        let cm = face_instance();
        let problem = SelectionProblem::from_logits(&cm, &[0.0, 0.0], &[2.0, 0.0], 1).unwrap();
        let result = solve_convex(&problem).unwrap();
        assert_eq!(
            result.chosen,
            vec![2],
            "the contribution-1 path is the best singleton"
        );
        assert!(result.converged, "this small instance converges");
        // The relaxed solution stays feasible.
        let total: f64 = result.x_star.iter().sum();
        assert!((total - 1.0).abs() < 1e-6, "sum {total}");
        assert!(result.x_star.iter().all(|&x| (-1e-9..=1.0 + 1e-9).contains(&x)));
        // And no singleton beats it on the relaxed objective.
        let f_star = problem.objective(&result.x_star);
        for i in 0..3 {
            assert!(f_star <= problem.objective_of_subset(&[i]) + 1e-9);
        }
    }

    #[test]
    fn linear_and_topk_pick_the_big_contribution_on_the_face_instance() {
        let cm = face_instance();
        let problem = SelectionProblem::from_logits(&cm, &[0.0, 0.0], &[2.0, 0.0], 1).unwrap();
        assert_eq!(solve_linear(&problem).unwrap().chosen, vec![1]);
        assert_eq!(rank_topk(&problem, false).unwrap().chosen, vec![1]);
    }

    #[test]
    fn objective_trace_is_monotone_on_a_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<[f64; 2]> = (0..8)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let delta = rows.iter().fold([0.0, 0.0], |a, r| [a[0] + r[0], a[1] + r[1]]);
        let cm = matrix(&rows, delta);
        let z0 = [0.3, -0.5];
        let z1 = [z0[0] + delta[0], z0[1] + delta[1]];
        let problem = SelectionProblem::from_logits(&cm, &z0, &z1, 3).unwrap();
        let result = solve_convex(&problem).unwrap();
        for w in result.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace rose: {} -> {}", w[0], w[1]);
        }
        assert_eq!(result.chosen.len(), 3);
    }

    #[test]
    fn single_path_problem_is_trivially_solved() {
        let cm = matrix(&[[1.5, -0.5]], [1.5, -0.5]);
        let problem = SelectionProblem::from_logits(&cm, &[0.0, 0.0], &[1.5, -0.5], 1).unwrap();
        let result = solve_convex(&problem).unwrap();
        assert_eq!(result.chosen, vec![0]);
        assert!((result.x_star[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_selection_chooses_every_path() {
        let cm = face_instance();
        let problem = SelectionProblem::from_logits(&cm, &[0.0, 0.0], &[2.0, 0.0], 3).unwrap();
        let result = solve_convex(&problem).unwrap();
        assert_eq!(result.chosen, vec![0, 1, 2]);
    }

    #[test]
    fn equal_scores_fall_back_to_first_indices() {
        let cm = matrix(&[[0.5, 0.5]; 4], [2.0, 2.0]);
        let problem = SelectionProblem::from_logits(&cm, &[0.0, 0.0], &[2.0, 2.0], 2).unwrap();
        assert_eq!(solve_linear(&problem).unwrap().chosen, vec![0, 1]);
        assert_eq!(rank_topk(&problem, false).unwrap().chosen, vec![0, 1]);
    }

    #[test]
    fn deeplift_flags_an_unchanged_prediction() {
        let cm = matrix(&[[1.0, 0.0], [0.5, 0.0]], [1.5, 0.0]);
        let problem = SelectionProblem::from_logits(&cm, &[2.0, 0.0], &[3.5, 0.0], 1).unwrap();
        let result = rank_deeplift(&problem, 0, 0).unwrap();
        assert!(result.degenerate);
        assert_eq!(result.chosen, vec![0], "zero scores fall back to the tie rule");
        let distinct = rank_deeplift(&problem, 1, 0).unwrap();
        assert!(!distinct.degenerate);
        assert!(rank_deeplift(&problem, 0, 5).is_err());
    }

    #[test]
    fn problem_validation_catches_bad_inputs() {
        let cm = face_instance();
        assert!(SelectionProblem::new(&cm, &[0.0, 0.0], &[0.6, 0.6], 1).is_err());
        assert!(SelectionProblem::new(&cm, &[0.0], &[0.5, 0.5], 1).is_err());
        assert!(SelectionProblem::new(&cm, &[0.0, 0.0], &[0.5, 0.5], 0).is_err());
        assert!(SelectionProblem::new(&cm, &[0.0, 0.0], &[0.5, 0.5], 4).is_err());
        assert!(SelectionProblem::new(&cm, &[f64::NAN, 0.0], &[0.5, 0.5], 1).is_err());
    }

    #[test]
    fn gate_gradients_pick_the_bridge_to_the_feature_bearing_node() {
        // Features live only on node 2; the added edge (1,2) is the bridge
        // that lets them reach node 0.
        let feats = arr2(&[[0.0], [0.0], [1.0]]);
        let g0 = Graph::new(3, vec![(0, 1)], feats).unwrap();
        let g1 = apply_delta(&g0, &EdgeDelta::new(vec![(1, 2)]).unwrap()).unwrap();
        let model = GnnModel::new(vec![arr2(&[[1.0]]), arr2(&[[1.0]])]).unwrap();
        let trace1 = forward(&model, &g1).unwrap();
        let attribution = attribute_changed_paths(&model, &g0, &g1, 0).unwrap();
        assert_eq!(attribution.paths.len(), 1);
        assert_eq!(attribution.paths.get(0).nodes(), &[2, 1, 0]);
        let result = rank_grad(&model, &g1, &trace1, 0, &attribution.paths, 1).unwrap();
        assert_eq!(result.chosen, vec![0]);
        let scores =
            gate_gradient_scores(&model, &g1, &trace1, 0, 0, &attribution.paths).unwrap();
        assert!(scores[0] > 0.0, "the bridge path carries gradient");
    }

    #[test]
    fn lrp_ranking_on_zero_features_uses_the_tie_rule() {
        let feats = Array2::zeros((3, 1));
        let g0 = Graph::new(3, vec![(1, 2)], feats).unwrap();
        let g1 = apply_delta(&g0, &EdgeDelta::new(vec![(0, 1)]).unwrap()).unwrap();
        let model = GnnModel::new(vec![arr2(&[[1.0]]), arr2(&[[1.0]])]).unwrap();
        let trace1 = forward(&model, &g1).unwrap();
        let attribution = attribute_changed_paths(&model, &g0, &g1, 0).unwrap();
        let m = attribution.paths.len();
        assert_eq!(m, 4);
        let result = rank_lrp(&model, &trace1, 0, &attribution.paths, 2).unwrap();
        assert_eq!(result.chosen, vec![0, 1], "all scores zero, first indices win");
    }

    #[test]
    fn dispatcher_runs_every_method_on_one_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let feats = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
        let g0 = Graph::new(6, vec![(0, 1), (2, 3)], feats).unwrap();
        let g1 = apply_delta(&g0, &EdgeDelta::new(vec![(1, 2), (0, 4)]).unwrap()).unwrap();
        let model = GnnModel::new(vec![
            Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0)),
            Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0)),
        ])
        .unwrap();
        let trace0 = forward(&model, &g0).unwrap();
        let trace1 = forward(&model, &g1).unwrap();
        let attribution = attribute_changed_paths(&model, &g0, &g1, 0).unwrap();
        assert!(attribution.paths.len() >= 2);
        let ctx = SelectionContext {
            model: &model,
            g1: &g1,
            trace0: &trace0,
            trace1: &trace1,
            target: 0,
            attribution: &attribution,
            topk_absolute: false,
        };
        for method in Method::ALL {
            let result = ctx.select(method, 2).unwrap();
            assert_eq!(result.chosen.len(), 2, "{method}");
            assert!(result.chosen.windows(2).all(|w| w[0] < w[1]), "{method}");
            let repeat = ctx.select(method, 2).unwrap();
            assert_eq!(result.chosen, repeat.chosen, "{method} must be deterministic");
        }
    }
}
