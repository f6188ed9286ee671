//! Plain-text ingestion and report emission.
//!
//! Dataset directory layout:
//!
//! ```text
//! edges.tsv        one "u<TAB>v" pair per line
//! features.txt     one whitespace-separated feature row per node
//! labels.txt       one class id per node
//! train_mask.txt   optional: one node id per line
//! test_mask.txt    optional: one node id per line
//! ```
//!
//! Lines starting with `#` are comments in every input, including the
//! experiment config (`key = value` pairs). Parse errors carry the file and
//! line number, and the loader never drops rows silently: every non-comment
//! line becomes exactly one edge, feature row, label, or mask entry, or the
//! load fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{read_to_string, write_string, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::harness::{ExperimentConfig, ExperimentReport, ModelSpec, ResultRow, TimingRow};
use crate::select::Method;

// ---------------------------------------------------------------------
// Dataset bundles
// ---------------------------------------------------------------------

/// A loaded dataset: the graph, per-node labels, optional train/test masks,
/// and shape metadata.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub graph: Graph,
    pub labels: Vec<usize>,
    pub train_mask: Vec<NodeId>,
    pub test_mask: Vec<NodeId>,
    pub name: String,
    pub num_classes: usize,
    pub feat_dim: usize,
}

impl DatasetBundle {
    /// Shape line for cross-checking against published dataset tables.
    pub fn describe(&self) -> String {
        format!(
            "{}: {} nodes, {} edges, {} classes, {} features",
            self.name,
            self.graph.num_nodes(),
            self.graph.num_edges(),
            self.num_classes,
            self.feat_dim
        )
    }
}

/// Published (nodes, classes, features) shapes for the common citation
/// datasets, used to flag suspicious exports. The PubMed node count is
/// typeset ambiguously in some sources; 19717 is the standard count.
pub fn expected_shape(name: &str) -> Option<(usize, usize, usize)> {
    match name.to_ascii_lowercase().as_str() {
        "cora" => Some((2708, 7, 1433)),
        "citeseer" => Some((3321, 6, 3703)),
        "pubmed" => Some((19717, 3, 500)),
        _ => None,
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_edge_list(path: &Path) -> Result<Vec<(NodeId, NodeId)>> {
    let text = read_to_string(path)?;
    let mut edges = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (line_no, line) in content_lines(&text) {
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(parse_err(path, line_no, "expected exactly two node ids")),
        };
        let u: NodeId = a
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad node id {a:?}")))?;
        let v: NodeId = b
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad node id {b:?}")))?;
        if u == v {
            return Err(parse_err(path, line_no, format!("self-loop {u}-{v}")));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(parse_err(path, line_no, format!("duplicate edge {u}-{v}")));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (line_no, line) in content_lines(&text) {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| parse_err(path, line_no, format!("bad number {tok:?}")))
            })
            .collect::<Result<_>>()?;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(path, line_no, "non-finite feature value"));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("row has {} values, previous rows had {w}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    let w = width.unwrap_or(0);
    let mut matrix = Array2::zeros((rows.len(), w));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, x) in row.into_iter().enumerate() {
            matrix[(i, j)] = x;
        }
    }
    Ok(matrix)
}

fn read_usize_column(path: &Path) -> Result<Vec<usize>> {
    let text = read_to_string(path)?;
    let mut values = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let value: usize = line
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad integer {line:?}")))?;
        values.push(value);
    }
    Ok(values)
}

/// Load a list of edges to add from a TSV file (same format as
/// `edges.tsv`: one `u v` pair per line, `#` comments allowed).
pub fn load_delta(path: &Path) -> Result<crate::graph::EdgeDelta> {
    crate::graph::EdgeDelta::new(read_edge_list(path)?)
}

/// Load a dataset directory into a validated bundle. Known dataset names
/// are shape-checked against the published table and mismatches logged.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let edges = read_edge_list(&dir.join("edges.tsv"))?;
    let features = read_matrix(&dir.join("features.txt"))?;
    let labels = read_usize_column(&dir.join("labels.txt"))?;

    let n = features.nrows();
    let feat_dim = features.ncols();
    let graph = Graph::new(n, edges, features)?;
    if labels.len() != n {
        return Err(Error::LengthMismatch(n, labels.len()));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);

    let mut masks = [Vec::new(), Vec::new()];
    for (slot, file) in masks.iter_mut().zip(["train_mask.txt", "test_mask.txt"]) {
        let path = dir.join(file);
        if path.exists() {
            let ids = read_usize_column(&path)?;
            if let Some(&bad) = ids.iter().find(|&&v| v >= n) {
                return Err(Error::NodeOutOfRange {
                    node: bad,
                    num_nodes: n,
                });
            }
            *slot = ids;
        }
    }
    let [train_mask, test_mask] = masks;

    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    if let Some((en, ec, ed)) = expected_shape(&name) {
        if (n, num_classes, feat_dim) != (en, ec, ed) {
            log::warn!(
                "{name}: loaded shape ({n} nodes, {num_classes} classes, {feat_dim} features) \
                 differs from the published ({en}, {ec}, {ed})"
            );
        }
    }

    Ok(DatasetBundle {
        graph,
        labels,
        train_mask,
        test_mask,
        name,
        num_classes,
        feat_dim,
    })
}

/// Serialize a bundle back into the directory layout; loading the result
/// reproduces the graph and labels exactly.
pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut edges = String::from("# u\tv\n");
    for &(u, v) in bundle.graph.edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    write_string(&dir.join("edges.tsv"), &edges)?;

    let mut feats = String::new();
    for row in bundle.graph.features().rows() {
        let mut line = String::new();
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{x}");
        }
        feats.push_str(&line);
        feats.push('\n');
    }
    write_string(&dir.join("features.txt"), &feats)?;

    let mut labels = String::new();
    for &y in &bundle.labels {
        let _ = writeln!(labels, "{y}");
    }
    write_string(&dir.join("labels.txt"), &labels)?;

    for (ids, file) in [
        (&bundle.train_mask, "train_mask.txt"),
        (&bundle.test_mask, "test_mask.txt"),
    ] {
        if !ids.is_empty() {
            let mut text = String::new();
            for &v in ids {
                let _ = writeln!(text, "{v}");
            }
            write_string(&dir.join(file), &text)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------

/// Parse a `key = value` experiment config. Unknown and duplicate keys are
/// errors; `dataset` and `output` are required. Defaults: 200 added edges,
/// 10 repeats, seed 0, 2 layers, all six methods, a random model of hidden
/// width 16.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = read_to_string(path)?;
    let mut pairs: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (line_no, line) in content_lines(&text) {
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(path, line_no, "expected key = value"));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.insert(key.clone(), (line_no, value)).is_some() {
            return Err(parse_err(path, line_no, format!("duplicate key {key:?}")));
        }
    }

    const KNOWN: [&str; 11] = [
        "dataset",
        "output",
        "model",
        "hidden",
        "epochs",
        "lr",
        "added_edges",
        "repeats",
        "seed",
        "methods",
        "layers",
    ];
    for (key, (line_no, _)) in &pairs {
        if !KNOWN.contains(&key.as_str()) && key != "topk_absolute" {
            return Err(parse_err(path, *line_no, format!("unknown key {key:?}")));
        }
    }

    let take = |key: &str| pairs.get(key).cloned();
    let parse_num = |key: &str, default: usize| -> Result<usize> {
        match take(key) {
            None => Ok(default),
            Some((line_no, v)) => v
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad {key} value {v:?}"))),
        }
    };

    let Some((_, dataset)) = take("dataset") else {
        return Err(parse_err(path, 0, "missing required key \"dataset\""));
    };
    let Some((_, output)) = take("output") else {
        return Err(parse_err(path, 0, "missing required key \"output\""));
    };

    let hidden = parse_num("hidden", 16)?;
    let epochs = parse_num("epochs", 200)?;
    let lr = match take("lr") {
        None => 0.1,
        Some((line_no, v)) => v
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad lr value {v:?}")))?,
    };
    let model = match take("model") {
        None => ModelSpec::Random { hidden },
        Some((_, v)) if v == "random" => ModelSpec::Random { hidden },
        Some((_, v)) if v == "train" => ModelSpec::Train { hidden, epochs, lr },
        Some((_, v)) => ModelSpec::Load(PathBuf::from(v)),
    };

    let methods = match take("methods") {
        None => Method::ALL.to_vec(),
        Some((line_no, v)) => v
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<Method>()
                    .map_err(|e| parse_err(path, line_no, e.to_string()))
            })
            .collect::<Result<_>>()?,
    };
    let topk_absolute = match take("topk_absolute") {
        None => false,
        Some((line_no, v)) => match v.as_str() {
            "true" => true,
            "false" => false,
            _ => return Err(parse_err(path, line_no, format!("bad boolean {v:?}"))),
        },
    };
    let seed = match take("seed") {
        None => 0,
        Some((line_no, v)) => v
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad seed value {v:?}")))?,
    };

    let cfg = ExperimentConfig {
        dataset_dir: PathBuf::from(dataset),
        model,
        num_added_edges: parse_num("added_edges", 200)?,
        repeats: parse_num("repeats", 10)?,
        seed,
        methods,
        t_layers: parse_num("layers", 2)?,
        output_dir: PathBuf::from(output),
        topk_absolute,
    };
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------

pub const RESULTS_HEADER: &str =
    "dataset,seed,target,method,m,n,level,fidelity,residual_kl,base_kl";
pub const TIMING_HEADER: &str = "target,m,base_ms,opt_ms";

/// Render the results table; a fixed seed renders byte-identically.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.seed,
            r.target,
            r.method,
            r.m,
            r.n,
            r.level,
            r.fidelity,
            r.residual_kl,
            r.base_kl
        );
    }
    out
}

/// Render the per-target timing table (wall-clock, so not reproducible).
pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from(TIMING_HEADER);
    out.push('\n');
    for t in rows {
        let _ = writeln!(out, "{},{},{},{}", t.target, t.m, t.base_ms, t.opt_ms);
    }
    out
}

/// The files written by [`write_report`].
#[derive(Debug, Clone)]
pub struct WrittenReport {
    pub results: PathBuf,
    pub timing: PathBuf,
    pub summary: PathBuf,
}

/// Write results.csv, timing.csv, and summary.txt into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<WrittenReport> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let written = WrittenReport {
        results: dir.join("results.csv"),
        timing: dir.join("timing.csv"),
        summary: dir.join("summary.txt"),
    };
    write_string(&written.results, &results_csv(&report.rows))?;
    write_string(&written.timing, &timing_csv(&report.timings))?;
    write_string(&written.summary, &report.summary_text())?;
    Ok(written)
}

/// Turn a results CSV into gnuplot-ready data files, one per dataset:
/// a `level` column followed by mean and std columns for each method
/// present. An empty CSV yields an empty data file and a warning.
pub fn emit_plots(csv: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or("");
    let columns: Vec<&str> = header.split(',').collect();
    let find = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|&c| c == name)
            .ok_or_else(|| Error::InvalidArg(format!("results CSV is missing column {name:?}")))
    };

    let mut data_rows = lines.filter(|l| !l.trim().is_empty()).peekable();
    if header.is_empty() || data_rows.peek().is_none() {
        log::warn!("results CSV has no data rows; writing an empty plot file");
        let path = out_dir.join("empty_fidelity.dat");
        write_string(&path, "")?;
        return Ok(vec![path]);
    }
    let (ci_dataset, ci_method, ci_level, ci_fidelity) = (
        find("dataset")?,
        find("method")?,
        find("level")?,
        find("fidelity")?,
    );

    // dataset -> level -> method -> fidelity samples
    let mut grouped: BTreeMap<String, BTreeMap<usize, BTreeMap<Method, Vec<f64>>>> =
        BTreeMap::new();
    for (i, line) in data_rows.enumerate() {
        let line_no = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        let field = |ci: usize| -> Result<&str> {
            fields.get(ci).copied().ok_or_else(|| {
                Error::InvalidArg(format!("results CSV row {line_no} is missing column {ci}"))
            })
        };
        let method: Method = field(ci_method)?
            .parse()
            .map_err(|_| Error::InvalidArg(format!("row {line_no}: unknown method")))?;
        let level: usize = field(ci_level)?
            .parse()
            .map_err(|_| Error::InvalidArg(format!("row {line_no}: bad level")))?;
        let fidelity: f64 = field(ci_fidelity)?
            .parse()
            .map_err(|_| Error::InvalidArg(format!("row {line_no}: bad fidelity")))?;
        grouped
            .entry(field(ci_dataset)?.to_string())
            .or_default()
            .entry(level)
            .or_default()
            .entry(method)
            .or_default()
            .push(fidelity);
    }

    let mut written = Vec::new();
    for (dataset, by_level) in grouped {
        let mut methods: Vec<Method> = by_level
            .values()
            .flat_map(|cell| cell.keys().copied())
            .collect();
        methods.sort();
        methods.dedup();

        let mut out = String::from("# level");
        for m in &methods {
            let _ = write!(out, " {m}_mean {m}_std");
        }
        out.push('\n');
        for (level, cell) in &by_level {
            let _ = write!(out, "{level}");
            for m in &methods {
                match cell.get(m) {
                    Some(samples) => {
                        let count = samples.len() as f64;
                        let mean = samples.iter().sum::<f64>() / count;
                        let std = if samples.len() < 2 {
                            0.0
                        } else {
                            (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                                / (count - 1.0))
                                .sqrt()
                        };
                        let _ = write!(out, " {mean} {std}");
                    }
                    None => out.push_str(" nan nan"),
                }
            }
            out.push('\n');
        }
        let path = out_dir.join(format!("{dataset}_fidelity.dat"));
        write_string(&path, &out)?;
        written.push(path);
    }
    Ok(written)
}
