//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("backbone `{id}`: {reason}")]
    InvalidProfile { id: String, reason: String },
    #[error("duplicate backbone id `{0}`")]
    DuplicateId(String),
    #[error("k = {k} pools requested but only {n} backbones available")]
    TooFewBackbones { k: usize, n: usize },
    #[error("infeasible pool bounds: {0}")]
    InfeasibleBounds(String),
    #[error("unknown backbone id `{0}`")]
    UnknownBackbone(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported schema_version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding dimension mismatch: expected {expected}, found {found} (key {key})")]
    DimMismatch {
        expected: usize,
        found: usize,
        key: String,
    },
    #[error("embeddings file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("non-finite value in embedding {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Mismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    Unexpected {
        op: &'static str,
        expected: &'static str,
        got: (usize, usize),
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("non-finite value while {0}")]
    NonFinite(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("every pool is masked (upper bound {upper_bound}, {pools} pools)")]
    AllMasked { upper_bound: usize, pools: usize },
    #[error("empty pool {0}")]
    EmptyPool(usize),
    #[error("invalid selector input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("edge set contains a cycle")]
    Cycle,
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Usage accumulated before a failure.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialAccounting {
    pub tok_cost: f64,
    pub latency: f64,
    pub nodes_completed: usize,
}

#[derive(Debug, Error)]
pub enum ExecutionError {
    #[error("backend failed on node {node}: {message}")]
    Backend {
        node: usize,
        message: String,
        partial: PartialAccounting,
    },
    #[error("request failed after {attempts} attempts: {message}")]
    Remote { attempts: u32, message: String },
    #[error("invalid MAS instance: {0}")]
    InvalidInstance(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExecutionError {
    pub fn partial(&self) -> Option<&PartialAccounting> {
        match self {
            ExecutionError::Backend { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// Top-level error for the end-to-end pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Execution(#[from] ExecutionError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
