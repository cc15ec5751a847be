//! Integer-stepped cluster simulator.
//!
//! Each step runs, in order:
//! 1. release every connection whose true end step equals the clock,
//! 2. move the block queue (FIFO) to the head of the ready queue and append
//!    the step's arrivals; ready-queue overflow spills into the block queue,
//! 3. route ready requests one at a time, each admission updating occupancy
//!    before the next decision,
//! 4. record a snapshot,
//! 5. advance the clock.
//!
//! A block queue holding more than `block_queue_size` requests aborts the
//! episode.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::routing::{RoutingDecision, RoutingPolicy};
use crate::workload::{
    minutes_to_steps, steps_to_minutes, ResourceVector, UserRequest, NUM_RESOURCES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub server_num: usize,
    /// Per-server capacity.
    pub capacity: ResourceVector,
    pub ready_queue_size: usize,
    pub block_queue_size: usize,
    /// Lookahead horizon, minutes.
    pub predicted_range: u32,
    /// Number of lookahead offsets (h).
    pub future_sample: usize,
    /// Seconds per step.
    pub time_step: u32,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            server_num: 10,
            capacity: ResourceVector::splat(500),
            ready_queue_size: 200,
            block_queue_size: 200,
            predicted_range: 120,
            future_sample: 10,
            time_step: 12,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.server_num == 0 {
            return Err(Error::config("server_num must be at least 1"));
        }
        if self.time_step == 0 {
            return Err(Error::config("time_step must be positive"));
        }
        if self.future_sample == 0 {
            return Err(Error::config("future_sample must be at least 1"));
        }
        let range = self.predicted_range_steps();
        if range == 0 || !range.is_multiple_of(self.future_sample as u64) {
            return Err(Error::config(format!(
                "predicted_range ({range} steps) must be a positive multiple of future_sample ({})",
                self.future_sample
            )));
        }
        Ok(())
    }

    pub fn predicted_range_steps(&self) -> u64 {
        minutes_to_steps(f64::from(self.predicted_range), self.time_step)
    }

    /// Evenly spaced offsets `k * range / h`, `k = 1..=h`.
    pub fn lookahead_offsets(&self) -> Vec<u64> {
        let stride = self.predicted_range_steps() / self.future_sample as u64;
        (1..=self.future_sample as u64)
            .map(|k| k * stride)
            .collect()
    }

    /// Length of one server's lookahead feature vector: `4h + 1`.
    pub fn server_feature_len(&self) -> usize {
        NUM_RESOURCES * self.future_sample + 1
    }

    /// Mean capacity over resources, used to express normalized utilization
    /// in resource units.
    pub fn capacity_scale(&self) -> f64 {
        self.capacity
            .to_array()
            .iter()
            .map(|&c| f64::from(c))
            .sum::<f64>()
            / NUM_RESOURCES as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub request_id: u64,
    pub demand: ResourceVector,
    pub start_step: u64,
    pub true_end_step: u64,
    pub predicted_end_step: u64,
}

impl Connection {
    pub fn open(request: &UserRequest, start_step: u64) -> Self {
        Connection {
            request_id: request.id,
            demand: request.demand,
            start_step,
            true_end_step: start_step + u64::from(request.true_duration),
            predicted_end_step: start_step + u64::from(request.predicted_duration),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerState {
    pub index: usize,
    pub capacity: ResourceVector,
    connections: Vec<Connection>,
    occupancy: ResourceVector,
}

impl ServerState {
    pub fn new(index: usize, capacity: ResourceVector) -> Self {
        ServerState {
            index,
            capacity,
            connections: Vec::new(),
            occupancy: ResourceVector::ZERO,
        }
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    /// Sum of the demands of all live connections.
    pub fn occupancy(&self) -> ResourceVector {
        self.occupancy
    }

    pub fn connection_count(&self) -> usize {
        self.connections.len()
    }

    /// Whether `demand` fits on top of the current occupancy.
    pub fn feasible(&self, demand: ResourceVector) -> bool {
        self.occupancy
            .checked_add(demand)
            .is_some_and(|total| total.fits_within(self.capacity))
    }

    /// Adds a connection. Fails without modifying the server if it would
    /// exceed capacity.
    pub fn admit(&mut self, conn: Connection) -> Result<()> {
        match self.occupancy.checked_add(conn.demand) {
            Some(total) if total.fits_within(self.capacity) => {
                self.occupancy = total;
                self.connections.push(conn);
                Ok(())
            }
            _ => Err(Error::invariant(format!(
                "request {} does not fit on server {}",
                conn.request_id, self.index
            ))),
        }
    }

    /// Removes connections whose true end step is `clock`; returns their ids.
    pub fn release_due(&mut self, clock: u64) -> Vec<u64> {
        let mut released = Vec::new();
        let mut freed = ResourceVector::ZERO;
        self.connections.retain(|c| {
            if c.true_end_step <= clock {
                released.push(c.request_id);
                freed = freed
                    .checked_add(c.demand)
                    .expect("freed never exceeds occupancy");
                false
            } else {
                true
            }
        });
        self.occupancy = self
            .occupancy
            .checked_sub(freed)
            .expect("released demand is part of occupancy");
        released
    }

    /// Ground-truth `max(true_end - clock)` over live connections, 0 if empty.
    pub fn max_true_remaining(&self, clock: u64) -> u64 {
        self.connections
            .iter()
            .map(|c| c.true_end_step.saturating_sub(clock))
            .max()
            .unwrap_or(0)
    }

    /// `max(predicted_end - clock, 0)` over live connections, 0 if empty.
    pub fn max_predicted_remaining(&self, clock: u64) -> u64 {
        self.connections
            .iter()
            .map(|c| c.predicted_end_step.saturating_sub(clock))
            .max()
            .unwrap_or(0)
    }
}

/// Predicted per-resource utilization at each lookahead offset (resource
/// major within each offset: `[cpu, ram, hdd, bw]` for offset 1, then
/// offset 2, ...), followed by the predicted maximal remaining duration past
/// the last offset divided by the lookahead range.
///
/// A connection counts at offset `d` iff its predicted end step is after
/// `clock + d`.
pub fn lookahead_features<T: Scalar>(
    server: &ServerState,
    clock: u64,
    config: &SimulationConfig,
) -> Vec<T> {
    let offsets = config.lookahead_offsets();
    let h = offsets.len();
    let mut sums = vec![[0u64; NUM_RESOURCES]; h];
    let last = clock + offsets[h - 1];
    let mut remainder = 0u64;
    for c in server.connections() {
        let demand = c.demand.to_array();
        for (k, &d) in offsets.iter().enumerate() {
            if c.predicted_end_step <= clock + d {
                break;
            }
            for (s, &x) in sums[k].iter_mut().zip(&demand) {
                *s += u64::from(x);
            }
        }
        remainder = remainder.max(c.predicted_end_step.saturating_sub(last));
    }
    let cap = server.capacity.to_array();
    let mut out = Vec::with_capacity(NUM_RESOURCES * h + 1);
    for row in &sums {
        for (r, &s) in row.iter().enumerate() {
            out.push(if cap[r] == 0 {
                T::zero()
            } else {
                T::of_u64(s) / T::of_u64(u64::from(cap[r]))
            });
        }
    }
    out.push(T::of_u64(remainder) / T::of_u64(config.predicted_range_steps()));
    out
}

/// Per-server quantities recorded at the end of one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub occupancy: Vec<ResourceVector>,
    pub conn_count: Vec<u32>,
    /// Ground-truth maximal remaining duration per server, timesteps.
    pub max_remaining: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepLog {
    pub t: u64,
    pub released: Vec<u64>,
    pub routed: Vec<(u64, RoutingDecision)>,
    pub snapshot: Snapshot,
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    pub config: SimulationConfig,
    pub servers: Vec<ServerState>,
    pub ready_queue: VecDeque<UserRequest>,
    pub block_queue: VecDeque<UserRequest>,
    pub clock: u64,
    blocked_total: u64,
}

impl ClusterState {
    pub fn new(config: SimulationConfig) -> Result<Self> {
        config.validate()?;
        let servers = (0..config.server_num)
            .map(|i| ServerState::new(i, config.capacity))
            .collect();
        Ok(ClusterState {
            config,
            servers,
            ready_queue: VecDeque::new(),
            block_queue: VecDeque::new(),
            clock: 0,
            blocked_total: 0,
        })
    }

    pub fn live_connections(&self) -> usize {
        self.servers.iter().map(ServerState::connection_count).sum()
    }

    pub fn queued(&self) -> usize {
        self.ready_queue.len() + self.block_queue.len()
    }

    /// Number of times a request entered the block queue.
    pub fn blocked_total(&self) -> u64 {
        self.blocked_total
    }

    fn push_blocked(&mut self, request: UserRequest) -> bool {
        self.block_queue.push_back(request);
        self.blocked_total += 1;
        self.block_queue.len() > self.config.block_queue_size
    }

    /// Advances the cluster by one step. `arrivals` are the requests whose
    /// arrival step equals the current clock. Returns an error only if the
    /// policy picks an invalid or infeasible server.
    pub fn step(
        &mut self,
        arrivals: &[UserRequest],
        policy: &mut dyn RoutingPolicy,
    ) -> Result<StepLog> {
        let t = self.clock;
        let mut released = Vec::new();
        for s in &mut self.servers {
            released.extend(s.release_due(t));
        }

        let mut aborted = false;
        while let Some(r) = self.block_queue.pop_back() {
            self.ready_queue.push_front(r);
        }
        for r in arrivals {
            self.ready_queue.push_back(r.clone());
        }
        while self.ready_queue.len() > self.config.ready_queue_size {
            // Spill from the tail so the oldest requests stay at the head.
            let spill = self.ready_queue.split_off(self.config.ready_queue_size);
            for r in spill {
                if self.push_blocked(r) {
                    aborted = true;
                }
            }
        }

        let mut routed = Vec::new();
        while !aborted {
            let Some(request) = self.ready_queue.pop_front() else {
                break;
            };
            let decision = policy.route(self, &request);
            routed.push((request.id, decision));
            match decision {
                RoutingDecision::Server(i) => {
                    let server = self.servers.get_mut(i).ok_or_else(|| {
                        Error::invariant(format!(
                            "policy {} chose server {i} out of range",
                            policy.name()
                        ))
                    })?;
                    server.admit(Connection::open(&request, t))?;
                }
                RoutingDecision::Block => {
                    if self.push_blocked(request) {
                        aborted = true;
                    }
                }
            }
        }

        let snapshot = self.snapshot()?;
        self.clock += 1;
        Ok(StepLog {
            t,
            released,
            routed,
            snapshot,
            aborted,
        })
    }

    fn snapshot(&self) -> Result<Snapshot> {
        let t = self.clock;
        for s in &self.servers {
            if !s.occupancy().fits_within(s.capacity) {
                return Err(Error::invariant(format!(
                    "server {} over capacity at step {t}",
                    s.index
                )));
            }
        }
        Ok(Snapshot {
            occupancy: self.servers.iter().map(ServerState::occupancy).collect(),
            conn_count: self
                .servers
                .iter()
                .map(|s| s.connection_count() as u32)
                .collect(),
            max_remaining: self
                .servers
                .iter()
                .map(|s| s.max_true_remaining(t))
                .collect(),
        })
    }
}

/// Where every request ended up when an episode stopped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestAccounting {
    pub total: u64,
    pub completed: u64,
    pub in_flight: u64,
    /// Queued (ready or block) when the episode stopped early.
    pub lost_at_abort: u64,
    /// Not yet arrived when the episode stopped early.
    pub unarrived: u64,
}

impl RequestAccounting {
    pub fn balanced(&self) -> bool {
        self.total == self.completed + self.in_flight + self.lost_at_abort + self.unarrived
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub server_num: usize,
    pub capacity: ResourceVector,
    pub time_step: u32,
    pub snapshots: Vec<Snapshot>,
    pub terminated_early: bool,
    /// Queued requests that can never fit any server kept the episode from
    /// draining.
    pub stalled: bool,
    pub blocked_total: u64,
    pub accounting: RequestAccounting,
}

impl EpisodeResult {
    pub fn num_timesteps(&self) -> usize {
        self.snapshots.len()
    }

    /// Utilization `x_ri^t` normalized by capacity, one `[cpu, ram, hdd, bw]`
    /// row per server.
    pub fn utilization<T: Scalar>(&self, t: usize) -> Vec<[T; NUM_RESOURCES]> {
        let cap = self.capacity.to_array();
        self.snapshots[t]
            .occupancy
            .iter()
            .map(|occ| {
                let occ = occ.to_array();
                std::array::from_fn(|r| {
                    if cap[r] == 0 {
                        T::zero()
                    } else {
                        T::of_u64(u64::from(occ[r])) / T::of_u64(u64::from(cap[r]))
                    }
                })
            })
            .collect()
    }

    /// Ground-truth maximal remaining duration `d_i^t` per server, minutes.
    pub fn remaining_minutes<T: Scalar>(&self, t: usize) -> Vec<T> {
        self.snapshots[t]
            .max_remaining
            .iter()
            .map(|&d| T::of(steps_to_minutes(d as f64, self.time_step)))
            .collect()
    }

    /// Per-server time series: `t,server,cpu,ram,hdd,bw,conn_count,max_remaining_true`
    /// with raw resource units and remaining duration in timesteps.
    pub fn write_timeseries<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "server",
            "cpu",
            "ram",
            "hdd",
            "bw",
            "conn_count",
            "max_remaining_true",
        ])?;
        for (t, snap) in self.snapshots.iter().enumerate() {
            for i in 0..self.server_num {
                let o = snap.occupancy[i];
                w.write_record(&[
                    t.to_string(),
                    i.to_string(),
                    o.cpu.to_string(),
                    o.ram.to_string(),
                    o.hdd.to_string(),
                    o.bw.to_string(),
                    snap.conn_count[i].to_string(),
                    snap.max_remaining[i].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timeseries_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_timeseries(std::io::BufWriter::new(file))
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Runs one episode to completion, see [`run_episode_observed`].
pub fn run_episode(
    requests: &[UserRequest],
    config: &SimulationConfig,
    policy: &mut dyn RoutingPolicy,
    seed: u64,
) -> Result<EpisodeResult> {
    run_episode_observed(requests, config, policy, seed, |_, _| {})
}

/// Steps until all requests have arrived, both queues are empty and every
/// connection has ended, or until the block queue overflows. `seed` is
/// handed to [`RoutingPolicy::reset`]. `observe` sees every step log and the
/// state right after it.
pub fn run_episode_observed(
    requests: &[UserRequest],
    config: &SimulationConfig,
    policy: &mut dyn RoutingPolicy,
    seed: u64,
    mut observe: impl FnMut(&StepLog, &ClusterState),
) -> Result<EpisodeResult> {
    if requests
        .windows(2)
        .any(|w| w[0].arrival_step > w[1].arrival_step)
    {
        return Err(Error::config("requests must be sorted by arrival_step"));
    }
    let mut state = ClusterState::new(config.clone())?;
    policy.reset(seed);

    let mut snapshots = Vec::new();
    let mut next = 0usize;
    let mut completed = 0u64;
    let mut terminated_early = false;
    let mut stalled = false;
    loop {
        let start = next;
        while next < requests.len() && requests[next].arrival_step <= state.clock {
            next += 1;
        }
        let log = state.step(&requests[start..next], policy)?;
        completed += log.released.len() as u64;
        observe(&log, &state);
        let aborted = log.aborted;
        snapshots.push(log.snapshot);
        if aborted {
            terminated_early = true;
            break;
        }
        if next == requests.len() && state.live_connections() == 0 {
            if state.queued() == 0 {
                break;
            }
            // Nothing is running and nothing will arrive: a queued request
            // that fits no empty server will wait forever.
            let stuck = state
                .block_queue
                .iter()
                .chain(&state.ready_queue)
                .any(|r| !r.demand.fits_within(config.capacity));
            if stuck {
                terminated_early = true;
                stalled = true;
                break;
            }
        }
    }

    let in_flight = state.live_connections() as u64;
    let lost = if terminated_early {
        state.queued() as u64
    } else {
        0
    };
    let accounting = RequestAccounting {
        total: requests.len() as u64,
        completed,
        in_flight,
        lost_at_abort: lost,
        unarrived: (requests.len() - next) as u64,
    };
    if !accounting.balanced() {
        return Err(Error::invariant(format!(
            "request accounting does not balance: {accounting:?}"
        )));
    }
    Ok(EpisodeResult {
        server_num: config.server_num,
        capacity: config.capacity,
        time_step: config.time_step,
        snapshots,
        terminated_early,
        stalled,
        blocked_total: state.blocked_total(),
        accounting,
    })
}
