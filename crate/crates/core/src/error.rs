use cordgt_numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("event log is empty")]
    EmptyLog,
    #[error("node id {node} out of range (num_nodes = {num_nodes})")]
    NodeOutOfRange { node: u64, num_nodes: usize },
    #[error("{what} width mismatch: expected {expected}, found {found}")]
    FeatureWidth {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("timestamp of input event {index} is not finite")]
    BadTimestamp { index: usize },
    #[error("commit out of order: timestamp {ts} precedes committed watermark {watermark}")]
    OutOfOrderCommit { ts: f64, watermark: f64 },
    #[error("Poisson intensity estimate undefined for count {count} over duration {duration}")]
    UndefinedIntensity { count: u32, duration: f64 },
    #[error(
        "history leak: pair record at t_n = {last_ts} is not strictly before t_pred = {t_pred}"
    )]
    Leak { last_ts: f64, t_pred: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("conflicting ablation flags: {0}")]
    ConflictingFlags(String),
    #[error("missing column `{column}` on line {line}")]
    MissingColumn { column: &'static str, line: u64 },
    #[error("cannot parse {column} value `{value}` on line {line}")]
    Parse {
        column: &'static str,
        value: String,
        line: u64,
    },
    #[error("corrupt store cache: {0}")]
    BadCache(String),
    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("dataset has no state labels")]
    LabelsMissing,
    #[error("labels are degenerate: {0}")]
    DegenerateLabels(String),
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("model has no decomposition head")]
    HeadAbsent,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
