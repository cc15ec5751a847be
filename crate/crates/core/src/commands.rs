//! Command implementations behind the `evoroute` binary.
//!
//! Each command takes a [`RunConfig`] and an output directory and writes its
//! artifacts there; the binary only parses arguments and maps errors to exit
//! codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::{LeastConnection, LeastDurationGap, RandomRouter, RoundRobin};
use crate::neural::{FeatureScale, NeuralPolicy, PolicyGenome};
use crate::objectives::{episode_fitness, Fitness};
use crate::routing::RoutingPolicy;
use crate::sim::{run_episode, EpisodeResult, SimulationConfig};
use crate::trace::{load_trace, write_workload_file, LoadReport, TraceMapping};
use crate::trainer::{build_scenario, thread_pool, train, EvoConfig, Scenario, TrainOutcome};
use crate::workload::{UserRequest, WorkloadConfig};

/// Scenario indices at or above this are reserved for evaluation, so that
/// evaluation never reuses a training scenario.
pub const HELD_OUT_BASE: u64 = 1 << 32;

/// Complete configuration of a run; every field has a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; all other seeds derive from it.
    pub seed: u64,
    /// Number of evaluation seeds for `evaluate` and `sweep`.
    pub n_seeds: Option<usize>,
    pub workload: WorkloadConfig,
    pub sim: SimulationConfig,
    pub evo: EvoConfig,
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn n_seeds(&self) -> usize {
        self.n_seeds.unwrap_or(10)
    }

    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        self.sim.validate()?;
        if self.workload.time_step != self.sim.time_step {
            return Err(Error::config("workload.time_step and sim.time_step differ"));
        }
        if self.n_seeds() == 0 {
            return Err(Error::config("n_seeds must be at least 1"));
        }
        Ok(())
    }

    pub fn feature_scale(&self) -> FeatureScale {
        FeatureScale {
            max_demand: self.workload.max_res_req,
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// A router named on the command line.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Random,
    RoundRobin,
    LeastConnection,
    LeastDurationGap,
    Neural {
        path: PathBuf,
        genome: Arc<PolicyGenome<f64>>,
    },
}

impl PolicySpec {
    /// Parses `random`, `round_robin`, `least_connection`,
    /// `least_duration_gap` or `neural:<genome.json>`; the genome is loaded
    /// immediately.
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "random" => PolicySpec::Random,
            "round_robin" => PolicySpec::RoundRobin,
            "least_connection" => PolicySpec::LeastConnection,
            "least_duration_gap" => PolicySpec::LeastDurationGap,
            other => match other.strip_prefix("neural:") {
                Some(path) => {
                    let path = PathBuf::from(path);
                    let genome = Arc::new(PolicyGenome::load(&path)?);
                    PolicySpec::Neural { path, genome }
                }
                None => return Err(Error::config(format!("unknown policy {other:?}"))),
            },
        })
    }

    /// Comma separated list of policies.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Self::parse)
            .collect()
    }

    pub fn label(&self) -> String {
        match self {
            PolicySpec::Random => "random".into(),
            PolicySpec::RoundRobin => "round_robin".into(),
            PolicySpec::LeastConnection => "least_connection".into(),
            PolicySpec::LeastDurationGap => "least_duration_gap".into(),
            PolicySpec::Neural { path, .. } => format!("neural:{}", path.display()),
        }
    }

    pub fn instantiate(&self, cfg: &RunConfig) -> Result<Box<dyn RoutingPolicy>> {
        Ok(match self {
            PolicySpec::Random => Box::new(RandomRouter::default()),
            PolicySpec::RoundRobin => Box::new(RoundRobin::default()),
            PolicySpec::LeastConnection => Box::new(LeastConnection),
            PolicySpec::LeastDurationGap => Box::new(LeastDurationGap),
            PolicySpec::Neural { genome, .. } => Box::new(NeuralPolicy::new(
                Arc::clone(genome),
                &cfg.sim,
                cfg.feature_scale(),
                cfg.evo.mask_mode,
            )?),
        })
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Writes `workload.csv` (scenario 0 of the master seed) and the resolved
/// `config.json`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Vec<UserRequest>> {
    cfg.validate()?;
    create_dir(out)?;
    let scenario = build_scenario(&cfg.workload, cfg.seed, 0)?;
    write_workload_file(&out.join("workload.csv"), &scenario.requests)?;
    write_json(&out.join("config.json"), cfg)?;
    Ok(scenario.requests.to_vec())
}

/// Converts an external trace to `workload.csv`, with `ingest_report.json`
/// holding the row counts.
pub fn ingest(
    cfg: &RunConfig,
    trace: &Path,
    mapping: Option<&Path>,
    out: &Path,
) -> Result<LoadReport> {
    cfg.validate()?;
    let mapping = match mapping {
        Some(p) => TraceMapping::from_json_file(p)?,
        None => TraceMapping::workload_format(),
    };
    let (requests, report) = load_trace(trace, &mapping, &cfg.workload)?;
    create_dir(out)?;
    write_workload_file(&out.join("workload.csv"), &requests)?;
    write_json(&out.join("ingest_report.json"), &report)?;
    write_json(&out.join("config.json"), cfg)?;
    Ok(report)
}

/// Trains a population and writes its artifacts plus `config.json`.
pub fn train_command(cfg: &RunConfig, out: &Path, parallelism: usize) -> Result<TrainOutcome<f64>> {
    cfg.validate()?;
    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    train(
        &cfg.evo,
        &cfg.workload,
        &cfg.sim,
        cfg.seed,
        parallelism,
        Some(out),
    )
}

/// Outcome of one evaluation episode. `f_balance` is in resource units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub index: u64,
    pub f_balance: f64,
    pub f_idle: f64,
    pub aborted: bool,
    pub stalled: bool,
    pub blocked_total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy: String,
    pub n_seeds: usize,
    pub seeds: Vec<SeedResult>,
    pub f_balance: MeanStd,
    pub f_idle: MeanStd,
    /// False when a single seed makes the standard deviation meaningless.
    pub std_defined: bool,
    pub aborted: usize,
}

impl EvaluationReport {
    pub fn from_seeds(policy: String, seeds: Vec<SeedResult>) -> Self {
        let bal: Vec<f64> = seeds.iter().map(|s| s.f_balance).collect();
        let idle: Vec<f64> = seeds.iter().map(|s| s.f_idle).collect();
        EvaluationReport {
            policy,
            n_seeds: seeds.len(),
            f_balance: MeanStd::of(&bal),
            f_idle: MeanStd::of(&idle),
            std_defined: seeds.len() > 1,
            aborted: seeds.iter().filter(|s| s.aborted).count(),
            seeds,
        }
    }
}

/// Held-out evaluation scenarios `0..n` of `cfg`.
pub fn held_out_scenarios(
    workload: &WorkloadConfig,
    master_seed: u64,
    n: usize,
) -> Result<Vec<Scenario>> {
    (0..n as u64)
        .map(|i| build_scenario(workload, master_seed, HELD_OUT_BASE + i))
        .collect()
}

/// Runs `policy` on each scenario; results are in scenario order whatever
/// the parallelism.
pub fn run_policy(
    policy: &PolicySpec,
    cfg: &RunConfig,
    scenarios: &[Scenario],
    parallelism: usize,
) -> Result<Vec<(SeedResult, EpisodeResult)>> {
    let run = |(i, s): (usize, &Scenario)| -> Result<(SeedResult, EpisodeResult)> {
        let mut router = policy.instantiate(cfg)?;
        let result = run_episode(&s.requests, &cfg.sim, &mut router, s.policy_seed)?;
        let f: Fitness<f64> = episode_fitness::<f64>(&result)?.in_units(cfg.sim.capacity_scale());
        let seed = SeedResult {
            index: i as u64,
            f_balance: f.f_balance,
            f_idle: f.f_idle,
            aborted: result.terminated_early && !result.stalled,
            stalled: result.stalled,
            blocked_total: result.blocked_total,
        };
        Ok((seed, result))
    };
    let results: Vec<Result<_>> = match thread_pool(parallelism)? {
        Some(pool) => pool.install(|| scenarios.par_iter().enumerate().map(run).collect()),
        None => scenarios.iter().enumerate().map(run).collect(),
    };
    results.into_iter().collect()
}

/// Evaluates one policy on `n_seeds` held-out scenarios, or on `workload`
/// (a workload CSV) with `n_seeds` policy seeds. Writes `config.json`,
/// `report.json` and `timeseries.csv` of the first seed.
pub fn evaluate(
    cfg: &RunConfig,
    policy: &PolicySpec,
    workload: Option<&Path>,
    out: &Path,
    parallelism: usize,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    let scenarios = match workload {
        None => held_out_scenarios(&cfg.workload, cfg.seed, cfg.n_seeds())?,
        Some(path) => {
            let requests = Arc::new(crate::trace::read_workload_file(path)?);
            (0..cfg.n_seeds() as u64)
                .map(|i| Scenario {
                    requests: Arc::clone(&requests),
                    policy_seed: crate::seeds::derive(
                        cfg.seed,
                        crate::seeds::POLICY,
                        HELD_OUT_BASE + i,
                    ),
                })
                .collect()
        }
    };
    let runs = run_policy(policy, cfg, &scenarios, parallelism)?;
    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    runs[0]
        .1
        .write_timeseries_file(&out.join("timeseries.csv"))?;
    let report =
        EvaluationReport::from_seeds(policy.label(), runs.into_iter().map(|(s, _)| s).collect());
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Offered load as a fraction of cluster capacity.
    Load,
    /// Server count, with the offered load fraction held fixed.
    Servers,
    /// Prediction noise standard deviation, minutes.
    Sigma,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "load" => Ok(SweepAxis::Load),
            "servers" => Ok(SweepAxis::Servers),
            "sigma" => Ok(SweepAxis::Sigma),
            other => Err(Error::config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Load => "load",
            SweepAxis::Servers => "servers",
            SweepAxis::Sigma => "sigma",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Load => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::config(format!("load {value} must be >= 0")));
                }
                cfg.workload.mean_req_num = base.workload.mean_req_num_for_load(
                    value,
                    base.sim.server_num,
                    base.sim.capacity,
                );
            }
            SweepAxis::Servers => {
                if !(value.is_finite() && value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::config(format!(
                        "server count {value} must be a positive integer"
                    )));
                }
                let load = base
                    .workload
                    .load_fraction(base.sim.server_num, base.sim.capacity);
                cfg.sim.server_num = value as usize;
                cfg.workload.mean_req_num =
                    base.workload
                        .mean_req_num_for_load(load, cfg.sim.server_num, cfg.sim.capacity);
            }
            SweepAxis::Sigma => {
                cfg.workload.noise_sigma = value;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub policy: String,
    pub seed: u64,
    pub f_balance: f64,
    pub f_idle: f64,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepError {
    pub value: f64,
    pub policy: Option<String>,
    pub error: String,
}

/// Evaluates every policy at every axis value on the same held-out seeds.
/// A value or policy that fails is recorded in `sweep_errors.json` and the
/// sweep continues. Writes `sweep.csv` and the base `config.json`; aborted
/// episodes are listed in `sweep_aborts.json`.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    policies: &[PolicySpec],
    out: &Path,
    parallelism: usize,
) -> Result<(Vec<SweepRow>, Vec<SweepError>)> {
    base.validate()?;
    if values.is_empty() || policies.is_empty() {
        return Err(Error::config(
            "sweep needs at least one value and one policy",
        ));
    }
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &value in values {
        let cfg = match axis.apply(base, value) {
            Ok(c) => c,
            Err(e) => {
                errors.push(SweepError {
                    value,
                    policy: None,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let scenarios = held_out_scenarios(&cfg.workload, cfg.seed, cfg.n_seeds())?;
        for policy in policies {
            match run_policy(policy, &cfg, &scenarios, parallelism) {
                Ok(runs) => rows.extend(runs.into_iter().map(|(s, _)| SweepRow {
                    axis: axis.name().into(),
                    value,
                    policy: policy.label(),
                    seed: s.index,
                    f_balance: s.f_balance,
                    f_idle: s.f_idle,
                    aborted: s.aborted,
                })),
                Err(e) => errors.push(SweepError {
                    value,
                    policy: Some(policy.label()),
                    error: e.to_string(),
                }),
            }
        }
    }
    create_dir(out)?;
    write_json(&out.join("config.json"), base)?;
    let mut csv = String::from("axis,value,policy,seed,f_balance,f_idle\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.axis, r.value, r.policy, r.seed, r.f_balance, r.f_idle
        );
    }
    let path = out.join("sweep.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    write_json(&out.join("sweep_errors.json"), &errors)?;
    let aborts: Vec<&SweepRow> = rows.iter().filter(|r| r.aborted).collect();
    write_json(&out.join("sweep_aborts.json"), &aborts)?;
    Ok((rows, errors))
}
