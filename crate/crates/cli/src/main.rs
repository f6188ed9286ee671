//! `explain` — explain changes in GNN node classifications on evolving
//! graphs by attributing the prediction change to information-flow paths
//! and selecting a small, faithful subset of them.
//!
//! Exit codes: 0 success, 2 input or usage error, 3 numerical-invariant
//! violation (broken completeness, divergence, non-finite values).

use clap::{Args, Parser, Subcommand};
use pathexplain::attribution::attribute_changed_paths;
use pathexplain::fidelity::fidelity_kl_minus;
use pathexplain::gnn::{forward, kl_via_logits, GnnModel};
use pathexplain::graph::apply_delta;
use pathexplain::harness::{
    accuracy, preservation_rate, run_experiment, simulate_evolution, train_reference_model,
    Corruption, TrainOptions,
};
use pathexplain::io::{
    emit_plots, load_config, load_dataset, load_delta, save_dataset, DatasetBundle,
};
use pathexplain::select::{Method, SelectionContext};
use pathexplain::synth::citation_graph;
use pathexplain::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "explain",
    version,
    about = "Explain GNN prediction changes on evolving graphs via path attribution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment from a config file and write CSV reports.
    Run(RunArgs),
    /// Explain one target node's prediction change.
    One(OneArgs),
    /// Verify that path contributions reproduce the logit change exactly.
    Preserve(PreserveArgs),
    /// Generate a synthetic citation-style dataset directory.
    Synth(SynthArgs),
    /// Train a model on a dataset and save its weights.
    Train(TrainArgs),
    /// Turn a results CSV into gnuplot-ready mean-fidelity data files.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key=value` lines (see README for keys).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct OneArgs {
    /// Dataset directory (edges.tsv, features.txt, labels.txt).
    #[arg(long)]
    data: PathBuf,
    /// Model weights file written by `train` or a previous `run`.
    #[arg(long)]
    model: PathBuf,
    /// File of edges to add (same format as edges.tsv). Mutually
    /// exclusive with --added.
    #[arg(long, conflicts_with_all = ["added", "evolution_seed"])]
    delta: Option<PathBuf>,
    /// Number of random edges to add instead of reading --delta.
    #[arg(long)]
    added: Option<usize>,
    /// Seed for the simulated evolution.
    #[arg(long, default_value_t = 0)]
    evolution_seed: u64,
    /// The node whose prediction change to explain.
    #[arg(long)]
    target: usize,
    /// Selection method: convex, linear, topk, deeplift, grad, or lrp.
    #[arg(long, default_value = "convex")]
    method: Method,
    /// How many paths the explanation may keep.
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Rank the magnitude baseline by absolute contribution sums.
    #[arg(long)]
    topk_absolute: bool,
    /// Also print every changed path with its per-class contributions.
    #[arg(long)]
    dump_contributions: bool,
}

#[derive(Args)]
struct PreserveArgs {
    /// Dataset directory to scan.
    #[arg(long)]
    data: PathBuf,
    /// Model depth to test.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Hidden width of the randomly parameterized test models.
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    /// Edges added per simulated evolution.
    #[arg(long, default_value_t = 200)]
    added: u64,
    /// Independent evolutions to scan.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write the dataset into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    nodes: usize,
    #[arg(long, default_value_t = 7)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    features: usize,
    /// Average node degree of the generated graph.
    #[arg(long, default_value_t = 4.0)]
    avg_degree: f64,
    /// Probability that an edge stays within a class (0..=1).
    #[arg(long, default_value_t = 0.8)]
    homophily: f64,
    /// Fraction of nodes put into the training mask.
    #[arg(long, default_value_t = 0.6)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory to train on.
    #[arg(long)]
    data: PathBuf,
    /// Where to write the trained weights.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    /// A results.csv produced by `run`.
    #[arg(long)]
    results: PathBuf,
    /// Directory for the plot data files.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(args) => run(args),
        Command::One(args) => one(args),
        Command::Preserve(args) => preserve(args),
        Command::Synth(args) => synth(args),
        Command::Train(args) => train(args),
        Command::Plot(args) => plot(args),
    }
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.config)?;
    let (report, written) = run_experiment(&cfg)?;
    print!("{}", report.summary_text());
    let results = std::fs::read_to_string(&written.results)
        .map_err(|source| Error::Io { path: written.results.clone(), source })?;
    let plots = emit_plots(&results, &cfg.output_dir.join("plots"))?;
    println!("results: {}", written.results.display());
    println!("timing: {}", written.timing.display());
    println!("summary: {}", written.summary.display());
    for p in plots {
        println!("plot data: {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn one(args: OneArgs) -> Result<ExitCode> {
    let bundle = load_dataset(&args.data)?;
    let model = GnnModel::read_text(&args.model)?;
    if model.input_dim() != bundle.feat_dim {
        return Err(Error::DimensionMismatch {
            what: "model input vs dataset features",
            expected: bundle.feat_dim,
            found: model.input_dim(),
        });
    }
    let delta = match (&args.delta, args.added) {
        (Some(path), _) => load_delta(path)?,
        (None, Some(k)) => simulate_evolution(&bundle.graph, k, args.evolution_seed)?,
        (None, None) => {
            return Err(Error::InvalidArg(
                "provide either --delta <file> or --added <count>".into(),
            ))
        }
    };
    let g0 = &bundle.graph;
    let g1 = apply_delta(g0, &delta)?;
    println!(
        "evolution: {} added edges on {} ({} nodes)",
        delta.len(),
        bundle.name,
        g0.num_nodes()
    );

    let trace0 = forward(&model, g0)?;
    let trace1 = forward(&model, &g1)?;
    let attribution = attribute_changed_paths(&model, g0, &g1, args.target)?;
    let m = attribution.paths.len();
    let z0 = trace0.logits_of(args.target);
    let z1 = trace1.logits_of(args.target);
    println!(
        "target {}: class {} -> {} over {} changed paths (base divergence {:.6e})",
        args.target,
        argmax(z0),
        argmax(z1),
        m,
        kl_via_logits(z1, z0)
    );
    if args.dump_contributions {
        for (i, path) in attribution.paths.iter().enumerate() {
            println!("  path {i}: {path}  contributions {:?}", attribution.contributions.row(i));
        }
    }
    if m == 0 {
        println!("nothing to explain: the evolution does not reach this node");
        return Ok(ExitCode::SUCCESS);
    }

    let ctx = SelectionContext {
        model: &model,
        g1: &g1,
        trace0: &trace0,
        trace1: &trace1,
        target: args.target,
        attribution: &attribution,
        topk_absolute: args.topk_absolute,
    };
    let selection = ctx.select(args.method, args.n)?;
    if !selection.converged {
        log::warn!("solver stopped at its iteration cap; selection may be approximate");
    }
    if selection.degenerate {
        log::warn!("the predicted class did not change; this method degenerates here");
    }
    let chosen = attribution.paths.select(&selection.chosen)?;
    let record = fidelity_kl_minus(
        &model,
        &g1,
        &trace0,
        &trace1,
        args.target,
        args.method,
        &attribution,
        &chosen,
    )?;
    println!("selected {} of {} paths with {}:", selection.chosen.len(), m, args.method);
    for (&index, path) in selection.chosen.iter().zip(chosen.iter()) {
        println!(
            "  path {index}: {path}  contributions {:?}",
            attribution.contributions.row(index)
        );
    }
    println!(
        "fidelity {:.6} (residual divergence {:.6e}, base {:.6e})",
        record.fidelity, record.residual_kl, record.base_kl
    );
    Ok(ExitCode::SUCCESS)
}

fn preserve(args: PreserveArgs) -> Result<ExitCode> {
    let bundle = load_dataset(&args.data)?;
    let report = preservation_rate(
        &bundle.graph,
        args.layers,
        args.hidden,
        bundle.num_classes.max(2),
        args.added as usize,
        args.repeats,
        args.seed,
        Corruption::None,
    )?;
    println!(
        "{}-layer scan over {}: {}/{} targets preserved ({} skipped, {} vacuous repeats)",
        report.t_layers,
        bundle.name,
        report.preserved,
        report.total,
        report.skipped,
        report.vacuous_repeats
    );
    println!("preservation rate: {:.6}", report.rate());
    if report.rate() < 1.0 {
        eprintln!("error: some targets failed to reproduce their logit change");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(args: SynthArgs) -> Result<ExitCode> {
    if !(0.0..=1.0).contains(&args.train_fraction) {
        return Err(Error::InvalidArg("train fraction must lie in [0, 1]".into()));
    }
    let (graph, labels) = citation_graph(
        args.nodes,
        args.classes,
        args.features,
        args.avg_degree,
        args.homophily,
        args.seed,
    )?;
    let mut ids: Vec<usize> = (0..args.nodes).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(args.seed ^ 0x5EED));
    let cut = (args.nodes as f64 * args.train_fraction).round() as usize;
    let mut train_mask = ids[..cut].to_vec();
    let mut test_mask = ids[cut..].to_vec();
    train_mask.sort_unstable();
    test_mask.sort_unstable();

    let name = args
        .out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synthetic".into());
    let bundle = DatasetBundle {
        num_classes: args.classes,
        feat_dim: args.features,
        graph,
        labels,
        train_mask,
        test_mask,
        name,
    };
    save_dataset(&bundle, &args.out)?;
    println!("wrote {} to {}", bundle.describe(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let bundle = load_dataset(&args.data)?;
    let opts = TrainOptions {
        hidden: args.hidden,
        epochs: args.epochs,
        lr: args.lr,
        seed: args.seed,
    };
    let model = train_reference_model(
        &bundle.graph,
        &bundle.labels,
        &bundle.train_mask,
        bundle.num_classes.max(2),
        args.layers,
        &opts,
    )?;
    let trace = forward(&model, &bundle.graph)?;
    println!(
        "train accuracy: {:.4}",
        accuracy(&trace, &bundle.labels, &bundle.train_mask)
    );
    if !bundle.test_mask.is_empty() {
        println!(
            "test accuracy: {:.4}",
            accuracy(&trace, &bundle.labels, &bundle.test_mask)
        );
    }
    model.write_text(&args.out)?;
    println!("wrote model to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn plot(args: PlotArgs) -> Result<ExitCode> {
    let csv = std::fs::read_to_string(&args.results)
        .map_err(|source| Error::Io { path: args.results.clone(), source })?;
    for path in emit_plots(&csv, &args.out)? {
        println!("plot data: {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
