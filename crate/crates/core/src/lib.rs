//! Bi-objective connection routing for a cluster of servers.
//!
//! A discrete-time simulator admits long-lived connections with four
//! resource demands. Routers are either fixed heuristics or a small
//! feed-forward network that scores each server; networks are trained with
//! NSGA-II to trade off load balance against idle (stranded) server time.
//!
//! The simulator is integer valued. Objectives, features, the network and
//! the evolutionary bookkeeping are generic over [`Scalar`] (`f32`/`f64`);
//! the aliases below fix the common choice.

pub mod commands;
pub mod error;
pub mod evo;
pub mod heuristics;
pub mod neural;
pub mod num;
pub mod objectives;
pub mod routing;
pub mod seeds;
pub mod sim;
pub mod trace;
pub mod trainer;
pub mod workload;

pub use error::{Error, Result};
pub use heuristics::{LeastConnection, LeastDurationGap, RandomRouter, RoundRobin};
pub use neural::{FeatureScale, MaskMode, NetworkShape, NeuralPolicy, PolicyGenome};
pub use num::Scalar;
pub use objectives::{episode_fitness, Fitness, Normalizer};
pub use routing::{RoutingDecision, RoutingPolicy};
pub use sim::{run_episode, ClusterState, EpisodeResult, SimulationConfig};
pub use trainer::{train, EvoConfig, Scenario, TrainOutcome};
pub use workload::{generate_workload, ResourceVector, UserRequest, WorkloadConfig};

pub type Fitness64 = Fitness<f64>;
pub type Fitness32 = Fitness<f32>;
pub type Genome64 = PolicyGenome<f64>;
pub type Genome32 = PolicyGenome<f32>;
pub type NeuralPolicy64 = NeuralPolicy<f64>;
pub type NeuralPolicy32 = NeuralPolicy<f32>;
