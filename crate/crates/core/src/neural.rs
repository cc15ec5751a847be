//! Parameter-sharing scoring network.
//!
//! One small MLP (input -> ReLU hidden -> linear scalar) scores every
//! feasible server from `request ⊕ server ⊕ global` features; the highest
//! score wins. Because the weights are shared across servers the same genome
//! drives clusters of any size.
//!
//! Genome layout (flat, in order):
//! - hidden weights, input-major: entry `i * hidden + j` connects input `i`
//!   to hidden unit `j`,
//! - hidden biases (`hidden`),
//! - output weights (`hidden`),
//! - output bias (1).

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::routing::{mask_actions, RoutingDecision, RoutingPolicy};
use crate::sim::{lookahead_features, ClusterState, SimulationConfig};
use crate::workload::{UserRequest, NUM_RESOURCES};

pub const GENOME_FORMAT: &str = "merl-lb-genome-v1";
pub const REQUEST_FEATURES: usize = NUM_RESOURCES + 1;
pub const DEFAULT_INPUT: usize = 126;
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input: usize,
    pub hidden: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        NetworkShape {
            input: DEFAULT_INPUT,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl NetworkShape {
    /// Input width implied by `h` lookahead offsets: `5 + (4h + 1) + 2 * 4h`.
    pub fn for_config(config: &SimulationConfig, hidden: usize) -> Self {
        let lookahead = NUM_RESOURCES * config.future_sample;
        NetworkShape {
            input: REQUEST_FEATURES + lookahead + 1 + 2 * lookahead,
            hidden,
        }
    }

    pub fn genome_len(&self) -> usize {
        self.input * self.hidden + 2 * self.hidden + 1
    }
}

/// Flat weight vector of the scoring network; the unit of evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGenome<T: Scalar = f64> {
    shape: NetworkShape,
    weights: Vec<T>,
}

impl<T: Scalar> PolicyGenome<T> {
    pub fn new(shape: NetworkShape, weights: Vec<T>) -> Result<Self> {
        if weights.len() != shape.genome_len() {
            return Err(Error::config(format!(
                "genome has {} weights, shape {}x{} needs {}",
                weights.len(),
                shape.input,
                shape.hidden,
                shape.genome_len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::config(format!("genome weight {i} is not finite")));
        }
        Ok(PolicyGenome { shape, weights })
    }

    pub fn zeros(shape: NetworkShape) -> Self {
        PolicyGenome {
            shape,
            weights: vec![T::zero(); shape.genome_len()],
        }
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_weights(self) -> Vec<T> {
        self.weights
    }

    fn hidden_bias_offset(&self) -> usize {
        self.shape.input * self.shape.hidden
    }

    fn output_offset(&self) -> usize {
        self.hidden_bias_offset() + self.shape.hidden
    }

    pub fn set_hidden_weight(&mut self, input: usize, unit: usize, w: T) {
        self.weights[input * self.shape.hidden + unit] = w;
    }

    pub fn set_hidden_bias(&mut self, unit: usize, b: T) {
        let o = self.hidden_bias_offset();
        self.weights[o + unit] = b;
    }

    pub fn set_output_weight(&mut self, unit: usize, w: T) {
        let o = self.output_offset();
        self.weights[o + unit] = w;
    }

    pub fn set_output_bias(&mut self, b: T) {
        let last = self.weights.len() - 1;
        self.weights[last] = b;
    }

    /// Score without input validation.
    fn score(&self, input: &[T]) -> T {
        let h = self.shape.hidden;
        let (w_hid, rest) = self.weights.split_at(self.hidden_bias_offset());
        let (b_hid, rest) = rest.split_at(h);
        let (w_out, b_out) = rest.split_at(h);
        let mut acc = b_hid.to_vec();
        for (x, row) in input.iter().zip(w_hid.chunks_exact(h)) {
            if x.is_zero() {
                continue;
            }
            for (a, &w) in acc.iter_mut().zip(row) {
                *a = *a + *x * w;
            }
        }
        acc.iter()
            .zip(w_out)
            .fold(b_out[0], |s, (&a, &w)| s + a.max(T::zero()) * w)
    }

    pub fn to_file_format(&self) -> GenomeFile {
        GenomeFile {
            format: GENOME_FORMAT.to_string(),
            hidden: self.shape.hidden,
            input: self.shape.input,
            weights: self.weights.iter().map(|w| w.as_f64()).collect(),
        }
    }

    pub fn from_file_format(file: GenomeFile) -> Result<Self> {
        if file.format != GENOME_FORMAT {
            return Err(Error::config(format!(
                "unknown genome format {:?}",
                file.format
            )));
        }
        let shape = NetworkShape {
            input: file.input,
            hidden: file.hidden,
        };
        if let Some(i) = file.weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::config(format!("genome weight {i} is not finite")));
        }
        PolicyGenome::new(shape, file.weights.into_iter().map(T::of).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_file_format()).expect("genome serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GenomeFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_file_format(file).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// On-disk genome representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeFile {
    pub format: String,
    pub hidden: usize,
    pub input: usize,
    pub weights: Vec<f64>,
}

/// `score = w_out . relu(W_hid^T x + b_hid) + b_out`.
pub fn forward<T: Scalar>(genome: &PolicyGenome<T>, input: &[T]) -> Result<T> {
    if input.len() != genome.shape.input {
        return Err(Error::config(format!(
            "network expects {} inputs, got {}",
            genome.shape.input,
            input.len()
        )));
    }
    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::config("network input contains a non-finite value"));
    }
    Ok(genome.score(input))
}

/// Divisors that bring raw request quantities to roughly [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    /// Largest possible per-resource demand of one request.
    pub max_demand: u32,
}

impl Default for FeatureScale {
    fn default() -> Self {
        FeatureScale { max_demand: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures<T: Scalar = f64> {
    /// Normalized demands then normalized predicted duration.
    pub request: Vec<T>,
    /// One lookahead vector (`4h + 1`) per server.
    pub per_server: Vec<Vec<T>>,
    /// Per-coordinate mean then population std of the first `4h` entries of
    /// every server vector.
    pub global: Vec<T>,
}

impl<T: Scalar> StateFeatures<T> {
    /// Network input for server `i`: `request ⊕ per_server[i] ⊕ global`.
    pub fn network_input(&self, i: usize) -> Vec<T> {
        let mut v =
            Vec::with_capacity(self.request.len() + self.per_server[i].len() + self.global.len());
        self.write_network_input(i, &mut v);
        v
    }

    fn write_network_input(&self, i: usize, out: &mut Vec<T>) {
        out.clear();
        out.extend_from_slice(&self.request);
        out.extend_from_slice(&self.per_server[i]);
        out.extend_from_slice(&self.global);
    }
}

pub fn featurize<T: Scalar>(
    state: &ClusterState,
    request: &UserRequest,
    scale: FeatureScale,
) -> StateFeatures<T> {
    let cfg = &state.config;
    let demand_div = T::of_u64(u64::from(scale.max_demand.max(1)));
    let mut req: Vec<T> = request
        .demand
        .to_array()
        .iter()
        .map(|&d| T::of_u64(u64::from(d)) / demand_div)
        .collect();
    req.push(
        T::of_u64(u64::from(request.predicted_duration)) / T::of_u64(cfg.predicted_range_steps()),
    );

    let per_server: Vec<Vec<T>> = state
        .servers
        .iter()
        .map(|s| lookahead_features(s, state.clock, cfg))
        .collect();

    let width = NUM_RESOURCES * cfg.future_sample;
    let n = T::of_u64(per_server.len() as u64);
    let mut mean = vec![T::zero(); width];
    for v in &per_server {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m = *m + x;
        }
    }
    for m in &mut mean {
        *m = *m / n;
    }
    let mut std = vec![T::zero(); width];
    for v in &per_server {
        for ((s, &x), &m) in std.iter_mut().zip(v).zip(&mean) {
            *s = *s + (x - m) * (x - m);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
    }
    mean.extend(std);
    StateFeatures {
        request: req,
        per_server,
        global: mean,
    }
}

/// How infeasible servers take part in the argmax.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Infeasible servers are left out of the argmax.
    #[default]
    Exclude,
    /// Infeasible servers score 0; if one of them wins, the request blocks.
    Zero,
}

pub fn select_action<T: Scalar>(
    genome: &PolicyGenome<T>,
    state: &ClusterState,
    request: &UserRequest,
    scale: FeatureScale,
    mask_mode: MaskMode,
) -> RoutingDecision {
    let feasible = mask_actions(&state.servers, request.demand);
    match feasible.len() {
        0 => return RoutingDecision::Block,
        1 if mask_mode == MaskMode::Exclude => return RoutingDecision::Server(feasible[0]),
        _ => {}
    }
    let features = featurize::<T>(state, request, scale);
    let mut input = Vec::with_capacity(genome.shape.input);
    let mut best: Option<(T, usize)> = None;
    let mut consider = |i: usize, score: T| {
        // strict comparison keeps the lowest index on ties
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, i));
        }
    };
    match mask_mode {
        MaskMode::Exclude => {
            for &i in &feasible {
                features.write_network_input(i, &mut input);
                consider(i, genome.score(&input));
            }
        }
        MaskMode::Zero => {
            let mut next_feasible = feasible.iter().peekable();
            for i in 0..state.servers.len() {
                let score = if next_feasible.peek() == Some(&&i) {
                    next_feasible.next();
                    features.write_network_input(i, &mut input);
                    genome.score(&input)
                } else {
                    T::zero()
                };
                consider(i, score);
            }
        }
    }
    match best {
        Some((_, i)) if feasible.binary_search(&i).is_ok() => RoutingDecision::Server(i),
        _ => RoutingDecision::Block,
    }
}

/// Routing policy backed by a shared, immutable genome.
#[derive(Debug, Clone)]
pub struct NeuralPolicy<T: Scalar = f64> {
    genome: Arc<PolicyGenome<T>>,
    scale: FeatureScale,
    mask_mode: MaskMode,
}

impl<T: Scalar> NeuralPolicy<T> {
    /// Fails if the genome's input width does not match the lookahead size
    /// of `config`.
    pub fn new(
        genome: Arc<PolicyGenome<T>>,
        config: &SimulationConfig,
        scale: FeatureScale,
        mask_mode: MaskMode,
    ) -> Result<Self> {
        let want = NetworkShape::for_config(config, genome.shape.hidden);
        if genome.shape.input != want.input {
            return Err(Error::config(format!(
                "genome input width {} does not match {} features for future_sample={}",
                genome.shape.input, want.input, config.future_sample
            )));
        }
        Ok(NeuralPolicy {
            genome,
            scale,
            mask_mode,
        })
    }

    pub fn genome(&self) -> &PolicyGenome<T> {
        &self.genome
    }
}

impl<T: Scalar> RoutingPolicy for NeuralPolicy<T> {
    fn name(&self) -> String {
        "neural".into()
    }

    fn route(&mut self, cluster: &ClusterState, request: &UserRequest) -> RoutingDecision {
        select_action(&self.genome, cluster, request, self.scale, self.mask_mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heuristics::least_connection_route;
    use crate::sim::Connection;
    use crate::workload::ResourceVector;
    use rand::Rng;

    fn random_genome(seed: u64) -> PolicyGenome<f64> {
        let mut rng = crate::seeds::rng(seed);
        let shape = NetworkShape::default();
        let w = (0..shape.genome_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        PolicyGenome::new(shape, w).unwrap()
    }

    fn req(demand: ResourceVector, predicted: u32) -> UserRequest {
        UserRequest {
            id: 0,
            arrival_step: 0,
            demand,
            true_duration: predicted,
            predicted_duration: predicted,
        }
    }

    fn random_cluster(n: usize, seed: u64) -> ClusterState {
        let mut rng = crate::seeds::rng(seed);
        let mut st = ClusterState::new(SimulationConfig {
            server_num: n,
            ..Default::default()
        })
        .unwrap();
        st.clock = rng.random_range(0..500);
        for s in &mut st.servers {
            for id in 0..rng.random_range(1..25) {
                let d = ResourceVector::new(
                    rng.random_range(0..=10),
                    rng.random_range(0..=10),
                    rng.random_range(0..=10),
                    rng.random_range(0..=10),
                );
                let mut r = req(d, rng.random_range(5..=600));
                r.id = id;
                s.admit(Connection::open(
                    &r,
                    st.clock.saturating_sub(rng.random_range(0..100)),
                ))
                .unwrap();
            }
        }
        st
    }

    #[test]
    fn default_genome_has_4097_weights() {
        let shape = NetworkShape::default();
        assert_eq!(shape.genome_len(), 4097);
        assert_eq!(
            NetworkShape::for_config(&SimulationConfig::default(), 32),
            shape
        );
    }

    #[test]
    fn genome_validation() {
        let shape = NetworkShape::default();
        assert!(PolicyGenome::<f64>::new(shape, vec![0.0; 4096]).is_err());
        let mut w = vec![0.0; 4097];
        w[7] = f64::NAN;
        assert!(PolicyGenome::<f64>::new(shape, w).is_err());
    }

    #[test]
    fn featurize_empty_cluster() {
        let st = ClusterState::new(SimulationConfig::default()).unwrap();
        let f = featurize::<f64>(
            &st,
            &req(ResourceVector::new(5, 10, 0, 2), 300),
            FeatureScale::default(),
        );
        assert_eq!(f.request, vec![0.5, 1.0, 0.0, 0.2, 0.5]);
        assert!(f.per_server.iter().flatten().all(|&x| x == 0.0));
        assert!(f.global.iter().all(|&x| x == 0.0));
        assert_eq!(f.network_input(3).len(), 126);
    }

    #[test]
    fn single_server_has_zero_global_std() {
        let st = random_cluster(1, 3);
        let f = featurize::<f64>(
            &st,
            &req(ResourceVector::splat(1), 10),
            FeatureScale::default(),
        );
        assert!(f.global[40..].iter().all(|&x| x == 0.0));
        assert_eq!(&f.global[..40], &f.per_server[0][..40]);
    }

    #[test]
    fn global_features_match_column_statistics() {
        for seed in 0..10 {
            let st = random_cluster(7, seed);
            let f = featurize::<f64>(
                &st,
                &req(ResourceVector::splat(1), 10),
                FeatureScale::default(),
            );
            for c in 0..40 {
                let col: Vec<f64> = f.per_server.iter().map(|v| v[c]).collect();
                let mean = col.iter().sum::<f64>() / 7.0;
                let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 7.0;
                assert!((f.global[c] - mean).abs() < 1e-12);
                assert!((f.global[40 + c] - var.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_genome_scores_zero() {
        let g = PolicyGenome::<f64>::zeros(NetworkShape::default());
        assert_eq!(forward(&g, &[0.7; 126]).unwrap(), 0.0);
    }

    #[test]
    fn bias_path() {
        let mut g = random_genome(1);
        let want = {
            let w = g.weights();
            let b_hid = &w[126 * 32..126 * 32 + 32];
            let w_out = &w[126 * 32 + 32..126 * 32 + 64];
            w[4096]
                + b_hid
                    .iter()
                    .zip(w_out)
                    .map(|(b, o)| b.max(0.0) * o)
                    .sum::<f64>()
        };
        assert!((forward(&g, &[0.0; 126]).unwrap() - want).abs() < 1e-12);
        g.set_output_bias(2.5);
        assert_eq!(g.weights()[4096], 2.5);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let g = random_genome(1);
        assert!(forward(&g, &[0.0; 125]).is_err());
        let mut x = [0.0; 126];
        x[3] = f64::INFINITY;
        assert!(forward(&g, &x).is_err());
    }

    /// Naive evaluation straight from the documented layout.
    fn naive_forward(w: &[f64], x: &[f64]) -> f64 {
        let mut out = w[4096];
        for j in 0..32 {
            let mut z = w[126 * 32 + j];
            for i in 0..126 {
                z += w[i * 32 + j] * x[i];
            }
            out += w[126 * 32 + 32 + j] * if z > 0.0 { z } else { 0.0 };
        }
        out
    }

    #[test]
    fn forward_matches_naive_matmul() {
        let mut rng = crate::seeds::rng(77);
        for seed in 0..50 {
            let g = random_genome(seed);
            let x: Vec<f64> = (0..126).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = forward(&g, &x).unwrap();
            assert!((got - naive_forward(g.weights(), &x)).abs() < 1e-10);
        }
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let g = random_genome(5);
        let g32 = PolicyGenome::<f32>::from_file_format(g.to_file_format()).unwrap();
        let x: Vec<f64> = (0..126).map(|i| (i as f64 * 0.37).sin()).collect();
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let a = forward(&g, &x).unwrap();
        let b = forward(&g32, &x32).unwrap();
        assert!((a - f64::from(b)).abs() < 1e-3);
    }

    #[test]
    fn zero_genome_picks_lowest_feasible() {
        let g = PolicyGenome::<f64>::zeros(NetworkShape::default());
        let mut st = ClusterState::new(SimulationConfig {
            server_num: 3,
            ..Default::default()
        })
        .unwrap();
        let r = req(ResourceVector::splat(1), 10);
        assert_eq!(
            select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Exclude),
            RoutingDecision::Server(0)
        );
        st.servers[0]
            .admit(Connection::open(&req(ResourceVector::splat(500), 50), 0))
            .unwrap();
        assert_eq!(
            select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Exclude),
            RoutingDecision::Server(1)
        );
    }

    #[test]
    fn single_feasible_server_wins_regardless_of_scores() {
        let mut st = random_cluster(4, 8);
        let r = req(ResourceVector::splat(3), 10);
        for s in st.servers.iter_mut().take(3) {
            *s = ServerState::new(s.index, ResourceVector::ZERO);
        }
        for seed in 0..5 {
            let g = random_genome(seed);
            assert_eq!(
                select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Exclude),
                RoutingDecision::Server(3)
            );
        }
    }

    use crate::sim::ServerState;

    /// Genome whose only active path is `-cpu_utilization_at_first_offset`,
    /// so the argmax is the least loaded server.
    pub(crate) fn least_loaded_genome() -> PolicyGenome<f64> {
        let mut g = PolicyGenome::zeros(NetworkShape::default());
        // input 5 = this server's CPU utilization at the first offset
        g.set_hidden_weight(REQUEST_FEATURES, 0, 1.0);
        g.set_output_weight(0, -1.0);
        g
    }

    #[test]
    fn constructed_genome_reproduces_least_connection() {
        // uniform demands and long-lived connections make CPU utilization
        // proportional to connection count
        let mut rng = crate::seeds::rng(12);
        let g = least_loaded_genome();
        for _ in 0..100 {
            let n = rng.random_range(1..12);
            let mut st = ClusterState::new(SimulationConfig {
                server_num: n,
                ..Default::default()
            })
            .unwrap();
            for s in &mut st.servers {
                for _ in 0..rng.random_range(0..6) {
                    s.admit(Connection::open(&req(ResourceVector::splat(7), 600), 0))
                        .unwrap();
                }
            }
            let r = req(ResourceVector::splat(7), 100);
            let want = least_connection_route(&st.servers, &r);
            let got = select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Exclude);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn zero_mask_mode_blocks_when_infeasible_zero_wins() {
        // every feasible score negative, so an infeasible server's 0 wins
        let mut g = PolicyGenome::<f64>::zeros(NetworkShape::default());
        g.set_output_bias(-1.0);
        let mut st = ClusterState::new(SimulationConfig {
            server_num: 2,
            ..Default::default()
        })
        .unwrap();
        st.servers[0]
            .admit(Connection::open(&req(ResourceVector::splat(500), 50), 0))
            .unwrap();
        let r = req(ResourceVector::splat(1), 10);
        assert_eq!(
            select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Zero),
            RoutingDecision::Block
        );
        assert_eq!(
            select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Exclude),
            RoutingDecision::Server(1)
        );
        g.set_output_bias(1.0);
        assert_eq!(
            select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Zero),
            RoutingDecision::Server(1)
        );
    }

    #[test]
    fn genome_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        let g = random_genome(9);
        g.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let head = format!(r#"{{"format":"{GENOME_FORMAT}","hidden":32,"input":126,"weights":["#);
        assert!(text.starts_with(&head));
        assert_eq!(PolicyGenome::<f64>::load(&p).unwrap(), g);

        std::fs::write(
            &p,
            format!(r#"{{"format":"{GENOME_FORMAT}","hidden":32,"input":126,"weights":[1.0]}}"#),
        )
        .unwrap();
        assert!(PolicyGenome::<f64>::load(&p).is_err());
        std::fs::write(
            &p,
            r#"{"format":"other","hidden":1,"input":1,"weights":[1,1,1,1]}"#,
        )
        .unwrap();
        assert!(PolicyGenome::<f64>::load(&p).is_err());
    }

    #[test]
    fn neural_policy_checks_input_width() {
        let g = Arc::new(random_genome(1));
        let cfg = SimulationConfig {
            future_sample: 5,
            ..Default::default()
        };
        assert!(
            NeuralPolicy::new(g.clone(), &cfg, FeatureScale::default(), MaskMode::Exclude).is_err()
        );
        assert!(NeuralPolicy::new(
            g,
            &SimulationConfig::default(),
            FeatureScale::default(),
            MaskMode::Exclude
        )
        .is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            #[test]
            fn same_genome_scales_to_any_server_count(seed in any::<u64>(), pick in 0usize..4) {
                let n = [1usize, 3, 10, 50][pick];
                let g = random_genome(seed);
                let st = random_cluster(n, seed ^ 0x55);
                let r = req(ResourceVector::splat(4), 50);
                match select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Exclude) {
                    RoutingDecision::Server(i) => prop_assert!(i < n && st.servers[i].feasible(r.demand)),
                    RoutingDecision::Block => prop_assert!(mask_actions(&st.servers, r.demand).is_empty()),
                }
            }

            #[test]
            fn permuting_servers_moves_the_choice_with_them(seed in any::<u64>(), rot in 1usize..6) {
                let g = random_genome(seed);
                let st = random_cluster(6, seed ^ 0xAA);
                let r = req(ResourceVector::splat(4), 50);
                let mut permuted = st.clone();
                permuted.servers.rotate_left(rot);
                let a = select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Exclude);
                let b = select_action(&g, &permuted, &r, FeatureScale::default(), MaskMode::Exclude);
                match (a, b) {
                    (RoutingDecision::Server(i), RoutingDecision::Server(j)) => {
                        prop_assert_eq!(i, (j + rot) % 6);
                    }
                    (x, y) => prop_assert_eq!(x, y),
                }
            }

            #[test]
            fn output_scaling_scales_scores(seed in any::<u64>(), c in 0.01f64..100.0) {
                let g = random_genome(seed);
                let mut w = g.weights().to_vec();
                for x in &mut w[126 * 32 + 32..] { *x *= c; }
                let scaled = PolicyGenome::new(g.shape(), w).unwrap();
                let st = random_cluster(5, seed);
                let r = req(ResourceVector::splat(2), 80);
                let f = featurize::<f64>(&st, &r, FeatureScale::default());
                for i in 0..5 {
                    let x = f.network_input(i);
                    let a = forward(&g, &x).unwrap() * c;
                    let b = forward(&scaled, &x).unwrap();
                    prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
                }
                prop_assert_eq!(
                    select_action(&g, &st, &r, FeatureScale::default(), MaskMode::Exclude),
                    select_action(&scaled, &st, &r, FeatureScale::default(), MaskMode::Exclude)
                );
            }
        }
    }
}
