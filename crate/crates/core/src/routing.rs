//! The routing-policy interface shared by heuristics and the neural policy.

use serde::{Deserialize, Serialize};

use crate::sim::{ClusterState, ServerState};
use crate::workload::{ResourceVector, UserRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoutingDecision {
    Server(usize),
    Block,
}

/// Chooses a server (or the block queue) for one request at a time.
///
/// The simulator rejects a server index that is out of range or infeasible
/// for the request, so implementations must consult [`mask_actions`].
pub trait RoutingPolicy: Send {
    fn name(&self) -> String;

    /// Called once at the start of every episode.
    fn reset(&mut self, _seed: u64) {}

    fn route(&mut self, cluster: &ClusterState, request: &UserRequest) -> RoutingDecision;
}

impl<P: RoutingPolicy + ?Sized> RoutingPolicy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn reset(&mut self, seed: u64) {
        (**self).reset(seed)
    }

    fn route(&mut self, cluster: &ClusterState, request: &UserRequest) -> RoutingDecision {
        (**self).route(cluster, request)
    }
}

/// Indices of the servers that can take `demand` right now, ascending.
pub fn mask_actions(servers: &[ServerState], demand: ResourceVector) -> Vec<usize> {
    servers
        .iter()
        .enumerate()
        .filter(|(_, s)| s.feasible(demand))
        .map(|(i, _)| i)
        .collect()
}
