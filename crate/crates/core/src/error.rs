use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("inconsistent perturbation: {0}")]
    InconsistentPerturbation(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "degenerate spectrum: eigenvalues {i} and {j} differ by {gap:.3e} \
         but are coupled by {coupling:.3e}"
    )]
    DegenerateSpectrum {
        i: usize,
        j: usize,
        gap: f64,
        coupling: f64,
    },

    #[error("input signal has zero norm and cannot be normalized")]
    ZeroInput,

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("probability {value} for {what} is outside [0, 1]")]
    Probability { what: String, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch} (loss {loss}); try a learning rate below {learning_rate}")]
    Divergence {
        epoch: usize,
        loss: f64,
        learning_rate: f64,
    },

    #[error("no connected sample after {0} attempts")]
    RetriesExhausted(usize),

    #[error("requested {requested} edges from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("graph has no community labels")]
    MissingCommunities,

    #[error("config error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("manifest absent: {} does not exist", .0.display())]
    ManifestAbsent(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
