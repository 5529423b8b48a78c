//! Structured errors shared by every module.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Structured error type for the whole crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label must be -1 or +1, got {0}")]
    BadLabel(f64),

    #[error("soft-threshold requires a nonnegative threshold, got {0}")]
    NegativeThreshold(f64),

    #[error("quadratic curvature must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("batch {0} is empty")]
    EmptyBatch(usize),

    #[error("invalid partition: cannot split {total} items into {parts} nonempty parts")]
    BadPartition { total: usize, parts: usize },

    #[error("invalid policy configuration: {0}")]
    BadPolicy(String),

    #[error("policy '{0}' requires a declared delay bound (tau_bound)")]
    MissingTauBound(&'static str),

    #[error("delay {tau} exceeds iteration index {k}; delays must lie in [0, k]")]
    DelayExceedsIteration { tau: usize, k: usize },

    #[error("window query at k={k} is beyond the recorded history of length {len}")]
    HistoryOutOfRange { k: usize, len: usize },

    #[error("delay trace exhausted at iteration {0}")]
    TraceExhausted(usize),

    #[error("delay {tau} exceeds ring capacity {capacity}; the run needs a history of at least {required} iterates")]
    RingCapacity {
        tau: usize,
        capacity: usize,
        required: usize,
    },

    #[error("run requires at least one worker")]
    NoWorkers,

    #[error("worker {worker} panicked: {message}")]
    WorkerPanic { worker: usize, message: String },

    #[error("parameter-server run needs one worker per objective component: {workers} workers vs {components} components")]
    WorkerComponentMismatch { workers: usize, components: usize },

    #[error("verifier case '{case}' needs {what}, which the problem does not provide")]
    MissingCertificate {
        case: &'static str,
        what: &'static str,
    },

    #[error("sequence entry {name}[{k}] = {value} is negative; certificate sequences must be nonnegative")]
    NegativeSequenceEntry {
        name: &'static str,
        k: usize,
        value: f64,
    },

    #[error("contraction factor q[{k}] = {value} is outside (0, 1]")]
    BadContraction { k: usize, value: f64 },

    #[error("trace ensemble disagrees on the shared (delay, step-size) schedule at k={0}")]
    MismatchedSchedules(usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed trace file: {0}")]
    BadTrace(String),

    #[error("malformed event log: {0}")]
    BadEventLog(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attaches a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
