//! Baseline routers. All of them pick only among feasible servers, return
//! [`RoutingDecision::Block`] when none is feasible, and break ties toward
//! the lowest server index.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::routing::{mask_actions, RoutingDecision, RoutingPolicy};
use crate::seeds;
use crate::sim::{ClusterState, ServerState};
use crate::workload::UserRequest;

/// Uniform choice over the feasible set.
#[derive(Debug, Clone)]
pub struct RandomRouter {
    rng: ChaCha8Rng,
}

impl RandomRouter {
    pub fn new(seed: u64) -> Self {
        RandomRouter {
            rng: seeds::rng(seed),
        }
    }
}

impl Default for RandomRouter {
    fn default() -> Self {
        RandomRouter::new(0)
    }
}

pub fn random_route(
    servers: &[ServerState],
    request: &UserRequest,
    rng: &mut impl Rng,
) -> RoutingDecision {
    let feasible = mask_actions(servers, request.demand);
    if feasible.is_empty() {
        return RoutingDecision::Block;
    }
    RoutingDecision::Server(feasible[rng.random_range(0..feasible.len())])
}

impl RoutingPolicy for RandomRouter {
    fn name(&self) -> String {
        "random".into()
    }

    fn reset(&mut self, seed: u64) {
        self.rng = seeds::rng(seed);
    }

    fn route(&mut self, cluster: &ClusterState, request: &UserRequest) -> RoutingDecision {
        random_route(&cluster.servers, request, &mut self.rng)
    }
}

/// Cyclic scan starting at the cursor; the cursor moves just past the chosen
/// server and stays put on BLOCK.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    pub cursor: usize,
}

pub fn round_robin_route(
    servers: &[ServerState],
    request: &UserRequest,
    cursor: &mut usize,
) -> RoutingDecision {
    let n = servers.len();
    for k in 0..n {
        let i = (*cursor + k) % n;
        if servers[i].feasible(request.demand) {
            *cursor = (i + 1) % n;
            return RoutingDecision::Server(i);
        }
    }
    RoutingDecision::Block
}

impl RoutingPolicy for RoundRobin {
    fn name(&self) -> String {
        "round_robin".into()
    }

    fn reset(&mut self, _seed: u64) {
        self.cursor = 0;
    }

    fn route(&mut self, cluster: &ClusterState, request: &UserRequest) -> RoutingDecision {
        round_robin_route(&cluster.servers, request, &mut self.cursor)
    }
}

/// Feasible server with the fewest live connections.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeastConnection;

pub fn least_connection_route(servers: &[ServerState], request: &UserRequest) -> RoutingDecision {
    argmin_feasible(servers, request, |s| s.connection_count())
}

impl RoutingPolicy for LeastConnection {
    fn name(&self) -> String {
        "least_connection".into()
    }

    fn route(&mut self, cluster: &ClusterState, request: &UserRequest) -> RoutingDecision {
        least_connection_route(&cluster.servers, request)
    }
}

/// Feasible server whose maximal predicted remaining duration is closest to
/// the request's predicted duration. Empty servers count as remaining 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeastDurationGap;

pub fn least_duration_gap_route(
    servers: &[ServerState],
    request: &UserRequest,
    clock: u64,
) -> RoutingDecision {
    let wanted = u64::from(request.predicted_duration);
    argmin_feasible(servers, request, |s| {
        s.max_predicted_remaining(clock).abs_diff(wanted)
    })
}

impl RoutingPolicy for LeastDurationGap {
    fn name(&self) -> String {
        "least_duration_gap".into()
    }

    fn route(&mut self, cluster: &ClusterState, request: &UserRequest) -> RoutingDecision {
        least_duration_gap_route(&cluster.servers, request, cluster.clock)
    }
}

fn argmin_feasible<K: Ord>(
    servers: &[ServerState],
    request: &UserRequest,
    key: impl Fn(&ServerState) -> K,
) -> RoutingDecision {
    servers
        .iter()
        .enumerate()
        .filter(|(_, s)| s.feasible(request.demand))
        // min_by_key keeps the first of equal keys
        .min_by_key(|(_, s)| key(s))
        .map_or(RoutingDecision::Block, |(i, _)| RoutingDecision::Server(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Connection, SimulationConfig};
    use crate::workload::ResourceVector;
    use proptest::prelude::*;

    fn request(demand: ResourceVector, predicted: u32) -> UserRequest {
        UserRequest {
            id: 999,
            arrival_step: 0,
            demand,
            true_duration: predicted,
            predicted_duration: predicted,
        }
    }

    fn server_with(index: usize, loads: &[(ResourceVector, u32)]) -> ServerState {
        let mut s = ServerState::new(index, ResourceVector::splat(500));
        for &(d, dur) in loads {
            s.admit(Connection::open(&request(d, dur), 0)).unwrap();
        }
        s
    }

    fn servers_with_counts(counts: &[usize]) -> Vec<ServerState> {
        counts
            .iter()
            .enumerate()
            .map(|(i, &n)| server_with(i, &vec![(ResourceVector::splat(1), 50); n]))
            .collect()
    }

    const SMALL: ResourceVector = ResourceVector::splat(1);

    #[test]
    fn mask_full_and_empty() {
        let empty = servers_with_counts(&[0, 0, 0]);
        assert_eq!(mask_actions(&empty, SMALL), vec![0, 1, 2]);
        let full: Vec<_> = (0..3)
            .map(|i| server_with(i, &[(ResourceVector::splat(500), 9)]))
            .collect();
        assert!(mask_actions(&full, SMALL).is_empty());
        assert_eq!(
            least_connection_route(&full, &request(SMALL, 1)),
            RoutingDecision::Block
        );
        assert_eq!(
            least_duration_gap_route(&full, &request(SMALL, 1), 0),
            RoutingDecision::Block
        );
        assert_eq!(
            round_robin_route(&full, &request(SMALL, 1), &mut 0),
            RoutingDecision::Block
        );
        assert_eq!(
            random_route(&full, &request(SMALL, 1), &mut seeds::rng(1)),
            RoutingDecision::Block
        );
    }

    #[test]
    fn random_single_feasible_server() {
        let mut servers: Vec<_> = (0..4)
            .map(|i| server_with(i, &[(ResourceVector::splat(500), 9)]))
            .collect();
        servers[2] = ServerState::new(2, ResourceVector::splat(500));
        let mut rng = seeds::rng(3);
        for _ in 0..50 {
            assert_eq!(
                random_route(&servers, &request(SMALL, 1), &mut rng),
                RoutingDecision::Server(2)
            );
        }
    }

    #[test]
    fn random_frequencies_within_three_sigma() {
        let servers = servers_with_counts(&[0; 10]);
        let mut rng = seeds::rng(17);
        let draws = 100_000;
        let mut counts = [0u32; 10];
        for _ in 0..draws {
            match random_route(&servers, &request(SMALL, 1), &mut rng) {
                RoutingDecision::Server(i) => counts[i] += 1,
                RoutingDecision::Block => panic!("all feasible"),
            }
        }
        let p = 0.1;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                (f64::from(c) - draws as f64 * p).abs() <= 3.0 * sd,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn round_robin_cycles_and_skips() {
        let servers = servers_with_counts(&[0, 0, 0]);
        let mut cursor = 0;
        let picks: Vec<_> = (0..6)
            .map(|_| round_robin_route(&servers, &request(SMALL, 1), &mut cursor))
            .collect();
        assert_eq!(picks, [0, 1, 2, 0, 1, 2].map(RoutingDecision::Server));

        let mut servers = servers;
        servers[1] = server_with(1, &[(ResourceVector::splat(500), 9)]);
        let mut cursor = 0;
        let picks: Vec<_> = (0..4)
            .map(|_| round_robin_route(&servers, &request(SMALL, 1), &mut cursor))
            .collect();
        assert_eq!(picks, [0, 2, 0, 2].map(RoutingDecision::Server));

        let full: Vec<_> = (0..3)
            .map(|i| server_with(i, &[(ResourceVector::splat(500), 9)]))
            .collect();
        let mut cursor = 2;
        assert_eq!(
            round_robin_route(&full, &request(SMALL, 1), &mut cursor),
            RoutingDecision::Block
        );
        assert_eq!(cursor, 2);
    }

    #[test]
    fn least_connection_cases() {
        let r = request(SMALL, 1);
        assert_eq!(
            least_connection_route(&servers_with_counts(&[3, 1, 2]), &r),
            RoutingDecision::Server(1)
        );
        assert_eq!(
            least_connection_route(&servers_with_counts(&[2, 2, 2]), &r),
            RoutingDecision::Server(0)
        );
        let mut servers = servers_with_counts(&[0, 5, 7]);
        // no connections, yet no room
        servers[0] = ServerState::new(0, ResourceVector::ZERO);
        assert_eq!(
            least_connection_route(&servers, &r),
            RoutingDecision::Server(1)
        );
    }

    fn servers_with_remaining(remaining: &[u32]) -> Vec<ServerState> {
        remaining
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if d == 0 {
                    ServerState::new(i, ResourceVector::splat(500))
                } else {
                    server_with(i, &[(SMALL, d)])
                }
            })
            .collect()
    }

    #[test]
    fn least_duration_gap_cases() {
        // minutes expressed directly as steps; only differences matter
        let servers = servers_with_remaining(&[10, 29, 60]);
        assert_eq!(
            least_duration_gap_route(&servers, &request(SMALL, 30), 0),
            RoutingDecision::Server(1)
        );
        let servers = servers_with_remaining(&[20, 40]);
        assert_eq!(
            least_duration_gap_route(&servers, &request(SMALL, 30), 0),
            RoutingDecision::Server(0)
        );
        let servers = servers_with_remaining(&[0, 0, 0]);
        assert_eq!(
            least_duration_gap_route(&servers, &request(SMALL, 77), 0),
            RoutingDecision::Server(0)
        );
        // remaining is measured at the current clock
        let servers = servers_with_remaining(&[100, 40]);
        assert_eq!(
            least_duration_gap_route(&servers, &request(SMALL, 30), 70),
            RoutingDecision::Server(0)
        );
    }

    fn arb_servers() -> impl Strategy<Value = (Vec<ServerState>, UserRequest, u64)> {
        let conn = (
            0u32..=200,
            0u32..=200,
            0u32..=200,
            0u32..=200,
            1u32..300,
            0u64..200,
        );
        let server = proptest::collection::vec(conn, 0..6);
        (
            proptest::collection::vec(server, 1..8),
            (0u32..=200, 0u32..=200, 0u32..=200, 0u32..=200, 1u32..300),
            0u64..200,
        )
            .prop_map(|(servers, (a, b, c, d, p), clock)| {
                let servers = servers
                    .into_iter()
                    .enumerate()
                    .map(|(i, conns)| {
                        let mut s = ServerState::new(i, ResourceVector::splat(500));
                        for (a, b, c, d, dur, start) in conns {
                            let r = request(ResourceVector::new(a, b, c, d), dur);
                            let conn = Connection::open(&r, start);
                            if s.feasible(conn.demand) {
                                s.admit(conn).unwrap();
                            }
                        }
                        s
                    })
                    .collect();
                (servers, request(ResourceVector::new(a, b, c, d), p), clock)
            })
    }

    proptest! {
        #[test]
        fn mask_matches_componentwise_check((servers, r, _clock) in arb_servers()) {
            let want: Vec<usize> = (0..servers.len())
                .filter(|&i| {
                    let occ = servers[i].connections().iter().fold([0u64; 4], |mut acc, c| {
                        for (a, x) in acc.iter_mut().zip(c.demand.to_array()) { *a += u64::from(x); }
                        acc
                    });
                    occ.iter().zip(r.demand.to_array()).all(|(o, d)| o + u64::from(d) <= 500)
                })
                .collect();
            prop_assert_eq!(mask_actions(&servers, r.demand), want);
        }

        #[test]
        fn every_policy_respects_the_mask((servers, r, clock) in arb_servers(), seed in any::<u64>()) {
            let feasible = mask_actions(&servers, r.demand);
            let mut cursor = (seed % servers.len() as u64) as usize;
            let decisions = [
                random_route(&servers, &r, &mut seeds::rng(seed)),
                round_robin_route(&servers, &r, &mut cursor),
                least_connection_route(&servers, &r),
                least_duration_gap_route(&servers, &r, clock),
            ];
            for d in decisions {
                match d {
                    RoutingDecision::Server(i) => prop_assert!(feasible.contains(&i)),
                    RoutingDecision::Block => prop_assert!(feasible.is_empty()),
                }
            }
        }

        #[test]
        fn least_duration_gap_is_brute_force_argmin((servers, r, clock) in arb_servers()) {
            let mut best: Option<(u64, usize)> = None;
            for (i, s) in servers.iter().enumerate() {
                if !s.feasible(r.demand) { continue; }
                let ds = s.connections().iter()
                    .map(|c| c.predicted_end_step as i64 - clock as i64)
                    .fold(0i64, i64::max);
                let gap = (ds - i64::from(r.predicted_duration)).unsigned_abs();
                if best.is_none_or(|(g, _)| gap < g) { best = Some((gap, i)); }
            }
            let want = best.map_or(RoutingDecision::Block, |(_, i)| RoutingDecision::Server(i));
            prop_assert_eq!(least_duration_gap_route(&servers, &r, clock), want);
        }
    }

    #[test]
    fn policies_reset_between_episodes() {
        let cfg = SimulationConfig::default();
        let cluster = ClusterState::new(cfg).unwrap();
        let mut rr = RoundRobin::default();
        rr.route(&cluster, &request(SMALL, 1));
        rr.reset(0);
        assert_eq!(rr.cursor, 0);

        let mut a = RandomRouter::new(5);
        let mut b = RandomRouter::new(99);
        b.reset(5);
        for _ in 0..20 {
            assert_eq!(
                a.route(&cluster, &request(SMALL, 1)),
                b.route(&cluster, &request(SMALL, 1))
            );
        }
    }
}
