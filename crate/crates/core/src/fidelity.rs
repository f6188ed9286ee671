//! Scoring an explanation by how much of the distribution change it covers.
//!
//! An explanation is a subset of a target's changed paths. Its score is the
//! ratio
//!
//! ```text
//! fidelity = KL(Pr(¬Gₙ) ‖ Pr(G0)) / KL(Pr(G1) ‖ Pr(G0))
//! ```
//!
//! where `¬Gₙ` is the evolved snapshot with the chosen paths deleted from
//! the target's computation tree. Removing nothing leaves the evolved
//! distribution intact (ratio 1); removing every changed path collapses the
//! tree back to the base snapshot (ratio 0). A good explanation drives the
//! ratio toward 0 with few paths.
//!
//! The ratio is computed with the exact pruned-tree forward pass — never by
//! subtracting contributions — so the metric stays independent of the
//! attribution machinery it is used to judge. The linear reconstruction
//! `KL(Pr(G1) ‖ softmax(z0 + Σ_chosen C_p))` is reported separately as
//! `residual_kl`.

use crate::attribution::{ContributionMatrix, PathAttribution};
use crate::error::{Error, Result};
use crate::gnn::{forward_pruned, kl_via_logits, log_sum_exp, softmax, ForwardTrace, GnnModel};
use crate::graph::{Graph, NodeId};
use crate::paths::PathSet;
use crate::select::Method;

/// Targets whose snapshots differ by less than this KL are excluded from
/// fidelity aggregation: the metric divides by that difference.
pub const BASE_KL_FLOOR: f64 = 1e-8;

/// One fidelity evaluation: which target and method, how many paths were
/// removed out of how many, and the three divergence numbers.
#[derive(Debug, Clone)]
pub struct FidelityRecord {
    pub target: NodeId,
    pub method: Method,
    /// Paths removed.
    pub n: usize,
    /// Total changed paths of the target.
    pub m: usize,
    /// `KL(Pr(¬Gₙ)‖Pr(G0)) / base_kl`; 1 at `n = 0`, 0 at `n = m`.
    pub fidelity: f64,
    /// `KL(Pr(G1) ‖ softmax(z0 + Σ_chosen C_p))` — the linear-reconstruction
    /// residual, for diagnostics.
    pub residual_kl: f64,
    /// `KL(Pr(G1)‖Pr(G0))`, the denominator.
    pub base_kl: f64,
}

/// `KL(Pr(G1) ‖ softmax(z0 + s))` where `s = Σ_{p ∈ chosen} C_p`, evaluated
/// in logit form:
///
/// ```text
/// Σ_j pr1_j·(z1_j − z0_j − s_j) − logsumexp(z1) + logsumexp(z0 + s)
/// ```
///
/// `chosen` must hold strictly increasing row indices of `contributions`;
/// that is asserted, not surfaced as an error.
pub fn residual_kl_via_contributions(
    contributions: &ContributionMatrix,
    z0: &[f64],
    z1: &[f64],
    chosen: &[usize],
) -> f64 {
    let c = contributions.num_classes();
    assert_eq!(z0.len(), c, "base logits must have one entry per class");
    assert_eq!(z1.len(), c, "evolved logits must have one entry per class");
    assert!(
        chosen.windows(2).all(|w| w[0] < w[1]),
        "chosen indices must be strictly increasing"
    );
    if let Some(&last) = chosen.last() {
        assert!(
            last < contributions.num_paths(),
            "chosen index {last} out of range for {} paths",
            contributions.num_paths()
        );
    }

    let mut shifted = z0.to_vec();
    for &i in chosen {
        for (sj, &cij) in shifted.iter_mut().zip(contributions.row(i)) {
            *sj += cij;
        }
    }
    let p1 = softmax(z1);
    let expected_gap: f64 = p1
        .iter()
        .zip(z1.iter().zip(&shifted))
        .map(|(&p, (&a, &s))| p * (a - s))
        .sum();
    let value = expected_gap - log_sum_exp(z1) + log_sum_exp(&shifted);
    // A KL divergence in exact arithmetic; only rounding can push it below
    // zero, and then only marginally.
    assert!(
        value > -1e-9,
        "residual KL fell below zero beyond rounding: {value}"
    );
    value.max(0.0)
}

/// Evaluate one explanation of one target.
///
/// `chosen` must be a subset of the target's changed paths (the rows of
/// `attribution`); membership is checked and a foreign path is an error.
/// Targets whose base divergence sits below [`BASE_KL_FLOOR`] are rejected
/// with [`Error::DegenerateBaseline`] so callers can count and skip them.
#[allow(clippy::too_many_arguments)]
pub fn fidelity_kl_minus(
    model: &GnnModel,
    g1: &Graph,
    trace0: &ForwardTrace,
    trace1: &ForwardTrace,
    target: NodeId,
    method: Method,
    attribution: &PathAttribution,
    chosen: &PathSet,
) -> Result<FidelityRecord> {
    if target >= g1.num_nodes() {
        return Err(Error::NodeOutOfRange {
            node: target,
            num_nodes: g1.num_nodes(),
        });
    }
    if let Some(root) = attribution.paths.root() {
        if root != target {
            return Err(Error::InvalidArg(format!(
                "attribution is rooted at {root}, not at target {target}"
            )));
        }
    }
    let mut indices = Vec::with_capacity(chosen.len());
    for path in chosen {
        let i = attribution
            .paths
            .index_of(path.nodes())
            .ok_or_else(|| Error::PathNotInGraph(format!("{path} is not a changed path")))?;
        indices.push(i);
    }
    indices.sort_unstable();

    let z0_row = trace0.logits_of(target);
    let z1_row = trace1.logits_of(target);
    let z0 = z0_row.as_slice().expect("logit rows are contiguous");
    let z1 = z1_row.as_slice().expect("logit rows are contiguous");

    let base_kl = kl_via_logits(z1, z0);
    if base_kl < BASE_KL_FLOOR {
        return Err(Error::DegenerateBaseline {
            target,
            kl: base_kl,
            floor: BASE_KL_FLOOR,
        });
    }

    let pruned_logits = forward_pruned(model, g1, trace1, target, chosen)?;
    let fidelity = kl_via_logits(&pruned_logits, z0) / base_kl;
    let residual_kl = residual_kl_via_contributions(&attribution.contributions, z0, z1, &indices);

    Ok(FidelityRecord {
        target,
        method,
        n: chosen.len(),
        m: attribution.paths.len(),
        fidelity,
        residual_kl,
        base_kl,
    })
}
