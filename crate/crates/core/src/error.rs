use crate::model::ItemSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("table valuation has no entry for {0:?}")]
    MissingTableEntry(ItemSet),

    #[error("{what}: size {size} exceeds the exhaustive cap {cap}")]
    CapExceeded {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("agent {agent} has a maximin share of zero and cannot be normalized")]
    ZeroMms { agent: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("item matching left {unmatched} blocks uncovered; input was not an alpha-multiallocation")]
    MatchingIncomplete { unmatched: usize },

    #[error("conversion retries exhausted after {attempts} attempts; failing agents {failing:?}")]
    RetriesExhausted {
        attempts: usize,
        failing: Vec<usize>,
    },

    #[error("partial allocation served {served} agents, quota is {quota}")]
    StandInFailed { served: usize, quota: usize },

    #[error("random pick restarts exhausted after {restarts} draws (multiplicity bound {bound})")]
    RestartsExhausted { restarts: usize, bound: usize },

    #[error("forest component admits no degree-{k} subgraph (flow {flow} < {need})")]
    InternalHallViolation { k: usize, flow: usize, need: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvariantViolation(_)
            | Error::MatchingIncomplete { .. }
            | Error::InternalHallViolation { .. } => 2,
            Error::RetriesExhausted { .. }
            | Error::RestartsExhausted { .. }
            | Error::StandInFailed { .. } => 3,
            _ => 4,
        }
    }
}
