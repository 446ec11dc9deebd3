//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An edge references a node id outside `0..num_nodes`.
    #[error("edge ({u}, {v}) references node outside 0..{num_nodes}")]
    NodeOutOfRange { u: usize, v: usize, num_nodes: usize },

    /// A dataset file is missing or unreadable.
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A dataset file exists but its contents do not parse.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// An edge in a graph collection crosses two member graphs.
    #[error("edge between nodes {u} and {v} crosses graphs {gu} and {gv}")]
    CrossGraphEdge { u: usize, v: usize, gu: usize, gv: usize },

    /// A binning column cannot support the requested discretisation. The
    /// caller is expected to drop the offending feature rather than abort.
    #[error("feature column is degenerate ({reason}); exclude this feature")]
    DegenerateColumn { reason: String },

    /// Power iteration failed to reach the requested tolerance.
    #[error("power iteration did not converge: residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.3e})")]
    NoConvergence {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    /// Two tensors (or a tensor and a graph) disagree about dimensions.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A configuration value is out of its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A checkpoint or result file has an unsupported layout.
    #[error("{path}: {message}")]
    BadArtifact { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}
