//! Error type shared by the whole crate.
//!
//! Errors fall into two broad classes that the CLI maps to distinct exit
//! codes: malformed or inconsistent *input* (exit code 2) and violations of
//! *numerical invariants* the algorithms are supposed to maintain (exit
//! code 3). The latter always indicate a bug or a genuinely degenerate
//! instance, never a user mistake.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} out of range (graph has {num_nodes} nodes)")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("edge ({0}, {1}) already present")]
    DuplicateEdge(usize, usize),

    #[error("explicit self pair ({0}, {0}) rejected: self-loops are implicit on every node")]
    ExplicitSelfLoop(usize),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("path {0} is not in the computation graph")]
    PathNotInGraph(String),

    #[error("altered-path count for target {target} exceeds cap {cap}")]
    PathCapExceeded { target: usize, cap: u64 },

    #[error("contribution completeness violated: max gap {gap:.3e} exceeds {threshold:.0e}")]
    CompletenessViolation { gap: f64, threshold: f64 },

    #[error("base divergence {kl:.3e} for target {target} is below the floor {floor:.0e}")]
    DegenerateBaseline { target: usize, kl: f64, floor: f64 },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl Error {
    /// Process exit code the CLI should use for this error:
    /// 2 for bad input, 3 for a numerical-invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::CompletenessViolation { .. }
            | Error::Divergence { .. }
            | Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}

/// Read a file into a string, attaching the path to any i/o error.
pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Write a string to a file, attaching the path to any i/o error.
pub(crate) fn write_string(path: &std::path::Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
