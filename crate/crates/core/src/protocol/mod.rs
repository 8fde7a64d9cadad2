//! TD-error aggregation protocols.

pub mod acyclic;
pub mod general;
pub mod network;
pub mod replay;

pub use acyclic::{AcyclicState, RhoMessage};
pub use general::{centralized_team_td, init_td_vector, Lane, Slot, TdHistory, TdVector};
pub use network::{AcyclicNetwork, Aggregator, CommStats, GeneralNetwork, NeighborhoodAverage};
pub use replay::{partial_sum_invariant, replay_acyclic, replay_general, AcyclicReplay, AcyclicSnapshot, InvariantCheck, Replay};
