use thiserror::Error;

/// Errors raised by lattice construction and the operations built on it.
///
/// Node identifiers in messages are the user-facing labels from the lattice file.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("children of node {node} do not sum to its measure")]
    MeasureMismatch { node: i64 },
    #[error("parent links form a cycle through node {node}")]
    CycleDetected { node: i64 },
    #[error("node {node} has non-positive or non-finite measure")]
    NonPositiveMeasure { node: i64 },
    #[error("node {node} is not strictly later in generation than its parent")]
    GenerationOrder { node: i64 },
    #[error("node {node} has exactly one child")]
    SingleChild { node: i64 },
    #[error("node {node} refers to missing parent {parent}")]
    UnknownParent { node: i64, parent: i64 },
    #[error("node id {node} appears more than once")]
    DuplicateId { node: i64 },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {node} is a leaf")]
    LeafNode { node: i64 },
    #[error("node {node} has no parent")]
    NoParent { node: i64 },
    #[error("no transform block at node {node}")]
    NoBlock { node: i64 },
    #[error("martingale component at node {node} violates the zero-mean invariant (residual {residual:e})")]
    ZeroMeanViolated { node: i64, residual: f64 },
    #[error("family member at node {node} is not supported on it or not constant on its children")]
    SupportViolation { node: i64 },
    #[error("objects live on different lattices")]
    LatticeMismatch,
    #[error("input must be nonnegative")]
    NegativeInput,
    #[error("exponent {name} = {value} outside {range}")]
    ExponentOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_exponent(
    name: &'static str,
    value: f64,
    lo: f64,
    lo_closed: bool,
    hi: f64,
    hi_closed: bool,
    range: &'static str,
) -> Result<()> {
    let lo_ok = if lo_closed { value >= lo } else { value > lo };
    let hi_ok = if hi_closed { value <= hi } else { value < hi };
    if lo_ok && hi_ok && !value.is_nan() {
        Ok(())
    } else {
        Err(Error::ExponentOutOfRange { name, value, range })
    }
}
