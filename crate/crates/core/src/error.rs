use alloc::string::String;

use crate::ClassId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid segment [{st}, {ed}): segment is empty")]
    EmptySegment { st: usize, ed: usize },
    #[error("segment [{st}, {ed}) exceeds {frames} frames")]
    SegmentOutOfBounds { st: usize, ed: usize, frames: usize },
    #[error("node {node} is outside the graph ({nodes} nodes)")]
    InvalidNode { node: ClassId, nodes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no cluster center for class {0}")]
    MissingCenter(ClassId),
    #[error("no threshold for class {0}")]
    MissingThreshold(ClassId),
    #[error("candidate set is empty")]
    NoCandidates,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { loss: f64, step: usize },
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
