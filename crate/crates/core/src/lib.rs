//! Explain changes in graph-network node classifications on evolving graphs.
//!
//! When a graph gains edges, a node's class distribution under a fixed
//! message-passing model shifts. This crate decomposes that shift exactly
//! into contributions of the information-flow paths the new edges created,
//! then selects the small subset of paths that best reproduces the shift —
//! either by convex optimisation over a relaxed subset indicator or by
//! simpler per-path scores — and measures how faithful any selection is by
//! actually silencing the chosen paths in the network's computation tree.
//!
//! Modules, bottom up:
//!
//! * [`graph`] — undirected snapshots with implicit self-loops, edge deltas.
//! * [`gnn`] — the T-layer sum-aggregation model, forward traces, softmax /
//!   KL helpers, and pruned computation-tree evaluation.
//! * [`paths`] — enumeration of changed computation-tree paths.
//! * [`attribution`] — per-path contribution vectors whose sum telescopes to
//!   the exact logit change.
//! * [`select`] — convex subset selection plus baseline rankers.
//! * [`fidelity`] — deletion-style faithfulness scores for a selection.
//! * [`synth`] — synthetic data and random models.
//! * [`harness`] — end-to-end experiments, invariance checks, training.
//! * [`io`] — dataset/config parsing and result serialisation.

pub mod attribution;
pub mod error;
pub mod fidelity;
pub mod graph;
pub mod gnn;
pub mod harness;
pub mod io;
pub mod paths;
pub mod select;
pub mod synth;

pub use attribution::{
    attribute_changed_paths, path_contribution, zero_reference_attribution,
    zero_reference_contribution, AttributionEngine, ContributionMatrix, PathAttribution,
    COMPLETENESS_THRESHOLD, RESCALE_EPS,
};
pub use error::{Error, Result};
pub use fidelity::{
    fidelity_kl_minus, residual_kl_via_contributions, FidelityRecord, BASE_KL_FLOOR,
};
pub use gnn::{
    forward, forward_pruned, forward_pruned_counted, kl_divergence, kl_via_logits, log_sum_exp,
    softmax, ForwardTrace, GnnModel, PrunedForward,
};
pub use graph::{apply_delta, EdgeDelta, Graph, NodeId};
pub use harness::{
    accuracy, collect_targets, preservation_rate, resolve_model, run_experiment,
    run_experiment_in_memory, schedule_for, simulate_evolution, train_reference_model, Corruption,
    ExperimentConfig, ExperimentReport, ModelSpec, PreservationReport, ResultRow, SkipNote,
    SummaryRow, TimingRow, TrainOptions, TARGET_TOLERANCE,
};
pub use io::{
    emit_plots, expected_shape, load_config, load_dataset, load_delta, results_csv, save_dataset,
    timing_csv,
    write_report, DatasetBundle, WrittenReport, RESULTS_HEADER, TIMING_HEADER,
};
pub use select::{
    gate_gradient_scores, project_capped_simplex, rank_deeplift, rank_grad, rank_lrp, rank_topk,
    solve_convex, solve_linear, Method, SelectionContext, SelectionProblem, SelectionResult,
    ARMIJO_C, PGD_MAX_ITERATIONS, PGD_TOLERANCE, PROJECTION_TOL,
};
pub use synth::{citation_graph, random_graph, random_model};
pub use paths::{
    count_delta_paths, delta_paths, delta_paths_with_cap, enumerate_paths, Path, PathSet,
    DEFAULT_PATH_CAP,
};
