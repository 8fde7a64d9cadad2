use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("topology: {0}")]
    Topology(String),

    #[error("transport: edge {src}->{dst} is not active at tick {tick}")]
    InactiveEdge { src: usize, dst: usize, tick: i64 },

    /// Two different values were received for the same (origin tick, agent)
    /// slot. Cannot happen on a faithful channel.
    #[error("protocol corruption: conflicting values for agent {agent} at origin tick {origin}")]
    Corruption { agent: usize, origin: i64 },

    /// The team-average TD error of `origin` was requested by `agent` at
    /// `tick` but some local TD error had not arrived; the latency bound
    /// does not hold for the configured network.
    #[error(
        "incomplete aggregation at tick {tick}: agent {agent} is missing {missing} TD error(s) of origin tick {origin}"
    )]
    Incomplete {
        tick: i64,
        agent: usize,
        origin: i64,
        missing: usize,
    },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("model: {0}")]
    Model(String),

    #[error("rank deficiency: {0}")]
    Rank(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures caused by the network violating the latency bound
    /// (or by a corrupted exchange) while a run was in progress.
    pub fn is_protocol_violation(&self) -> bool {
        matches!(self, Error::Incomplete { .. } | Error::Corruption { .. })
    }
}
