//! Evolutionary multi-objective training of routing genomes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evo::crossover_onepoint;
use crate::evo::{
    crowding_distance, fast_nondominated_sort, mutate_gaussian, ranks, select_elites,
};
use crate::neural::{FeatureScale, MaskMode, NetworkShape, NeuralPolicy, PolicyGenome};
use crate::num::Scalar;
use crate::objectives::{episode_fitness, scalarize, Fitness, Normalizer};
use crate::seeds;
use crate::sim::{run_episode, SimulationConfig};
use crate::workload::{apply_prediction_noise, generate_workload, UserRequest, WorkloadConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSeedPolicy {
    /// One training scenario for the whole run.
    #[default]
    Fixed,
    /// A fresh scenario every generation; every individual is re-evaluated.
    PerGeneration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    pub pop_size: usize,
    pub elite_count: usize,
    pub offspring_count: usize,
    /// Per-gene mutation probability.
    pub mutation_prob: f64,
    /// Standard deviation of the Gaussian mutation.
    pub mutation_sigma: f64,
    /// Budget in simulations; one individual evaluation is one simulation.
    pub max_simulations: u64,
    /// Optional cap on generations, counting the initial one.
    pub max_generations: Option<u64>,
    pub eval_seed_policy: EvalSeedPolicy,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub hidden: usize,
    pub mask_mode: MaskMode,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            pop_size: 50,
            elite_count: 25,
            offspring_count: 25,
            mutation_prob: 0.25,
            mutation_sigma: 0.05,
            max_simulations: 750_000,
            max_generations: None,
            eval_seed_policy: EvalSeedPolicy::Fixed,
            init_scale: 0.1,
            hidden: 32,
            mask_mode: MaskMode::Exclude,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elite_count + self.offspring_count != self.pop_size {
            return Err(Error::config(
                "elite_count + offspring_count must equal pop_size",
            ));
        }
        if self.elite_count == 0 {
            return Err(Error::config("elite_count must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::config("mutation_prob must lie in [0, 1]"));
        }
        if !(self.mutation_sigma.is_finite() && self.mutation_sigma > 0.0) {
            return Err(Error::config("mutation_sigma must be positive"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::config("init_scale must be finite and >= 0"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden must be at least 1"));
        }
        if self.max_simulations < self.pop_size as u64 {
            return Err(Error::config(format!(
                "max_simulations {} cannot cover one generation of {}",
                self.max_simulations, self.pop_size
            )));
        }
        Ok(())
    }

    fn generation_cost(&self) -> u64 {
        match self.eval_seed_policy {
            EvalSeedPolicy::Fixed => self.offspring_count as u64,
            EvalSeedPolicy::PerGeneration => self.pop_size as u64,
        }
    }
}

/// One evaluation instance: a request stream and the seed handed to the
/// policy. Every individual of a generation sees the same scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub requests: Arc<Vec<UserRequest>>,
    pub policy_seed: u64,
}

/// Scenario `index` of a run: workload, prediction noise and policy seeds all
/// derive from `master_seed` under their own labels. `workload.seed` is
/// ignored.
pub fn build_scenario(workload: &WorkloadConfig, master_seed: u64, index: u64) -> Result<Scenario> {
    let cfg = WorkloadConfig {
        seed: seeds::derive(master_seed, seeds::WORKLOAD, index),
        ..workload.clone()
    };
    let requests = generate_workload(&cfg)?;
    let requests = apply_prediction_noise(
        &requests,
        cfg.noise_sigma,
        seeds::derive(master_seed, seeds::NOISE, index),
        &cfg,
    )?;
    Ok(Scenario {
        requests: Arc::new(requests),
        policy_seed: seeds::derive(master_seed, seeds::POLICY, index),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation<T: Scalar = f64> {
    /// Fitness used for selection; penalized when the episode aborted.
    pub fitness: Fitness<T>,
    /// Fitness measured over the (possibly truncated) episode.
    pub raw: Fitness<T>,
    pub aborted: bool,
}

/// Shared settings for running genomes in the simulator.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub sim: SimulationConfig,
    pub scale: FeatureScale,
    pub mask_mode: MaskMode,
    /// Worker threads; 0 or 1 evaluates serially.
    pub parallelism: usize,
}

fn evaluate_one<T: Scalar>(
    genome: &Arc<PolicyGenome<T>>,
    scenario: &Scenario,
    settings: &EvalSettings,
) -> Result<(Fitness<T>, bool)> {
    let mut policy = NeuralPolicy::new(
        Arc::clone(genome),
        &settings.sim,
        settings.scale,
        settings.mask_mode,
    )?;
    let result = run_episode(
        &scenario.requests,
        &settings.sim,
        &mut policy,
        scenario.policy_seed,
    )?;
    Ok((episode_fitness(&result)?, result.terminated_early))
}

fn map_maybe_parallel<I: Sync, O: Send>(
    items: &[I],
    pool: Option<&rayon::ThreadPool>,
    f: impl Fn(&I) -> O + Sync + Send,
) -> Vec<O> {
    match pool {
        Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        None => items.iter().map(f).collect(),
    }
}

pub(crate) fn thread_pool(parallelism: usize) -> Result<Option<rayon::ThreadPool>> {
    if parallelism <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map(Some)
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

/// Runs every genome on the same scenario. Results are in input order and
/// do not depend on `parallelism`. An aborted episode is assigned a
/// penalty of ten times the worst objective values of the batch.
pub fn evaluate_population<T: Scalar>(
    genomes: &[Arc<PolicyGenome<T>>],
    scenario: &Scenario,
    settings: &EvalSettings,
) -> Result<Vec<Evaluation<T>>> {
    let pool = thread_pool(settings.parallelism)?;
    evaluate_with_pool(genomes, scenario, settings, pool.as_ref())
}

fn evaluate_with_pool<T: Scalar>(
    genomes: &[Arc<PolicyGenome<T>>],
    scenario: &Scenario,
    settings: &EvalSettings,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<Evaluation<T>>> {
    let raw = map_maybe_parallel(genomes, pool, |g| evaluate_one(g, scenario, settings))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(apply_abort_penalty(&raw))
}

/// Aborted entries get `10 *` the component-wise worst fitness among the
/// completed ones (or among all, if none completed; 1 if that is 0).
pub fn apply_abort_penalty<T: Scalar>(raw: &[(Fitness<T>, bool)]) -> Vec<Evaluation<T>> {
    let worst_of = |completed_only: bool| {
        raw.iter()
            .filter(|(f, aborted)| f.is_finite() && (!completed_only || !aborted))
            .fold(None, |acc: Option<Fitness<T>>, (f, _)| {
                Some(match acc {
                    None => *f,
                    Some(w) => Fitness::new(w.f_balance.max(f.f_balance), w.f_idle.max(f.f_idle)),
                })
            })
    };
    let worst = worst_of(true)
        .or_else(|| worst_of(false))
        .unwrap_or_default();
    let ten = T::of(10.0);
    let floor = |v: T| if v > T::zero() { v * ten } else { T::one() };
    let penalty = Fitness::new(floor(worst.f_balance), floor(worst.f_idle));
    raw.iter()
        .map(|&(f, aborted)| Evaluation {
            fitness: if aborted || !f.is_finite() {
                penalty
            } else {
                f
            },
            raw: f,
            aborted,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Individual<T: Scalar = f64> {
    pub id: u64,
    pub genome: Arc<PolicyGenome<T>>,
    pub fitness: Fitness<T>,
    pub aborted: bool,
    /// 1-based front index in the population it was last sorted in.
    pub rank: usize,
    pub crowding: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FrontEntry<T: Scalar = f64> {
    pub id: u64,
    pub f_balance: T,
    pub f_idle: T,
    pub genome: String,
}

#[derive(Debug, Clone)]
pub struct GenerationRecord<T: Scalar = f64> {
    pub generation: u64,
    pub simulations: u64,
    /// Ids and fitness of `S_1`.
    pub front: Vec<(u64, Fitness<T>)>,
    /// Selection fitness of the whole population.
    pub population: Vec<Fitness<T>>,
    pub aborted: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar = f64> {
    /// `S_1` of the final population, sorted by `f_balance`.
    pub final_front: Vec<Individual<T>>,
    pub final_population: Vec<Individual<T>>,
    pub history: Vec<GenerationRecord<T>>,
    pub simulations: u64,
}

impl<T: Scalar> TrainOutcome<T> {
    /// Min-max bounds over every completed evaluation in the run.
    pub fn normalizer(&self) -> Option<Normalizer<T>> {
        Normalizer::spanning(self.history.iter().flat_map(|g| g.population.iter()))
    }

    /// `(generation, simulations, best, mean)` of the equally weighted
    /// normalized score.
    pub fn convergence(&self) -> Vec<(u64, u64, T, T)> {
        let Some(norm) = self.normalizer() else {
            return Vec::new();
        };
        let half = T::of(0.5);
        self.history
            .iter()
            .map(|g| {
                let scores: Vec<T> = g
                    .population
                    .iter()
                    .map(|f| scalarize(f, half, half, &norm))
                    .collect();
                let best = scores.iter().copied().fold(T::infinity(), T::min);
                let mean = scores.iter().copied().sum::<T>() / T::of_u64(scores.len() as u64);
                (g.generation, g.simulations, best, mean)
            })
            .collect()
    }
}

fn sort_population<T: Scalar>(pop: &mut [Individual<T>]) -> Vec<usize> {
    let fitness: Vec<Fitness<T>> = pop.iter().map(|i| i.fitness).collect();
    let fronts = fast_nondominated_sort(&fitness);
    let rank = ranks(&fronts, pop.len());
    for front in &fronts {
        for (&i, c) in front.iter().zip(crowding_distance(&fitness, front)) {
            pop[i].crowding = c;
        }
    }
    for (ind, r) in pop.iter_mut().zip(rank) {
        ind.rank = r;
    }
    fronts.into_iter().next().unwrap_or_default()
}

/// NSGA-II loop: initialize, evaluate, then repeatedly select elites, breed
/// offspring by one-point crossover and Gaussian mutation, and evaluate,
/// until the simulation budget is spent. With `out_dir`, writes
/// `pareto_gen_<k>.json`, `genome_<id>.json` for every front member,
/// `final_front.json` and `convergence.csv`.
pub fn train<T: Scalar>(
    evo: &EvoConfig,
    workload: &WorkloadConfig,
    sim: &SimulationConfig,
    master_seed: u64,
    parallelism: usize,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    evo.validate()?;
    workload.validate()?;
    sim.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let settings = EvalSettings {
        sim: sim.clone(),
        scale: FeatureScale {
            max_demand: workload.max_res_req,
        },
        mask_mode: evo.mask_mode,
        parallelism,
    };
    let pool = thread_pool(parallelism)?;
    let shape = NetworkShape::for_config(sim, evo.hidden);
    let mut rng = seeds::rng(seeds::derive(master_seed, seeds::EVOLUTION, 0));
    let mut next_id = 0u64;
    let mut new_individual = |genome: PolicyGenome<T>| {
        let ind = Individual {
            id: next_id,
            genome: Arc::new(genome),
            fitness: Fitness::default(),
            aborted: false,
            rank: 0,
            crowding: T::zero(),
        };
        next_id += 1;
        ind
    };

    let mut population: Vec<Individual<T>> = (0..evo.pop_size)
        .map(|_| {
            let w = (0..shape.genome_len())
                .map(|_| T::of(rng.random_range(-evo.init_scale..=evo.init_scale)))
                .collect();
            new_individual(PolicyGenome::new(shape, w).expect("uniform weights are finite"))
        })
        .collect();

    let max_generations = evo.max_generations.unwrap_or(u64::MAX);
    let mut scenario = build_scenario(workload, master_seed, 0)?;
    let mut simulations = 0u64;
    let mut history = Vec::new();
    let mut generation = 0u64;
    let mut to_evaluate: Vec<usize> = (0..population.len()).collect();
    let mut written: BTreeSet<u64> = BTreeSet::new();
    loop {
        let genomes: Vec<_> = to_evaluate
            .iter()
            .map(|&i| Arc::clone(&population[i].genome))
            .collect();
        let evals = evaluate_with_pool(&genomes, &scenario, &settings, pool.as_ref())?;
        simulations += genomes.len() as u64;
        for (&i, e) in to_evaluate.iter().zip(&evals) {
            population[i].fitness = e.fitness;
            population[i].aborted = e.aborted;
        }
        let front = sort_population(&mut population);
        if let Some(dir) = out_dir {
            for &i in &front {
                if written.insert(population[i].id) {
                    population[i]
                        .genome
                        .save(&dir.join(genome_file_name(population[i].id)))?;
                }
            }
        }
        history.push(GenerationRecord {
            generation,
            simulations,
            front: front
                .iter()
                .map(|&i| (population[i].id, population[i].fitness))
                .collect(),
            population: population.iter().map(|i| i.fitness).collect(),
            aborted: population.iter().filter(|i| i.aborted).count(),
        });

        if generation + 1 >= max_generations
            || simulations + evo.generation_cost() > evo.max_simulations
        {
            break;
        }
        generation += 1;

        let fitness: Vec<Fitness<T>> = population.iter().map(|i| i.fitness).collect();
        let elites: Vec<Individual<T>> = select_elites(&fitness, evo.elite_count)?
            .into_iter()
            .map(|i| population[i].clone())
            .collect();
        let mut offspring = Vec::with_capacity(evo.offspring_count);
        while offspring.len() < evo.offspring_count {
            let a = rng.random_range(0..elites.len());
            let b = if elites.len() > 1 {
                let b = rng.random_range(0..elites.len() - 1);
                if b >= a {
                    b + 1
                } else {
                    b
                }
            } else {
                a
            };
            let (c1, c2) = crossover_onepoint(&elites[a].genome, &elites[b].genome, &mut rng)?;
            for child in [c1, c2] {
                if offspring.len() < evo.offspring_count {
                    let mutated =
                        mutate_gaussian(&child, evo.mutation_prob, evo.mutation_sigma, &mut rng);
                    offspring.push(new_individual(mutated));
                }
            }
        }
        population = elites;
        population.extend(offspring);
        to_evaluate = match evo.eval_seed_policy {
            EvalSeedPolicy::Fixed => (evo.elite_count..evo.pop_size).collect(),
            EvalSeedPolicy::PerGeneration => {
                scenario = build_scenario(workload, master_seed, generation)?;
                (0..evo.pop_size).collect()
            }
        };
    }

    let mut final_front: Vec<Individual<T>> =
        population.iter().filter(|i| i.rank == 1).cloned().collect();
    final_front.sort_by(|a, b| {
        a.fitness
            .f_balance
            .partial_cmp(&b.fitness.f_balance)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
    let outcome = TrainOutcome {
        final_front,
        final_population: population,
        history,
        simulations,
    };
    if let Some(dir) = out_dir {
        write_artifacts(&outcome, dir, sim.capacity_scale())?;
    }
    Ok(outcome)
}

pub fn genome_file_name(id: u64) -> String {
    format!("genome_{id}.json")
}

#[derive(Serialize)]
#[serde(bound = "T: Scalar")]
struct FrontFile<T: Scalar> {
    generation: u64,
    simulations: u64,
    front: Vec<FrontEntry<T>>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_artifacts<T: Scalar>(
    outcome: &TrainOutcome<T>,
    dir: &Path,
    capacity_scale: f64,
) -> Result<()> {
    let entries = |front: &[(u64, Fitness<T>)]| -> Vec<FrontEntry<T>> {
        front
            .iter()
            .map(|(id, f)| {
                let f = f.in_units(capacity_scale);
                FrontEntry {
                    id: *id,
                    f_balance: f.f_balance,
                    f_idle: f.f_idle,
                    genome: genome_file_name(*id),
                }
            })
            .collect()
    };

    for g in &outcome.history {
        let file = FrontFile {
            generation: g.generation,
            simulations: g.simulations,
            front: entries(&g.front),
        };
        write_json(
            &dir.join(format!("pareto_gen_{}.json", g.generation)),
            &file,
        )?;
    }
    let last = outcome.history.last().expect("at least one generation");
    write_json(
        &dir.join("final_front.json"),
        &FrontFile {
            generation: last.generation,
            simulations: last.simulations,
            front: entries(&last.front),
        },
    )?;

    let mut csv = String::from("generation,simulations,best_score,mean_score\n");
    for (g, s, best, mean) in outcome.convergence() {
        let _ = writeln!(csv, "{g},{s},{},{}", best.as_f64(), mean.as_f64());
    }
    let path = dir.join("convergence.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}
