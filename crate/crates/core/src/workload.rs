//! Synthetic request streams and duration-prediction noise.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub const NUM_RESOURCES: usize = 4;

/// Amounts of CPU, RAM, HDD and bandwidth in abstract integer units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu: u32,
    pub ram: u32,
    pub hdd: u32,
    pub bw: u32,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector::splat(0);

    pub const fn new(cpu: u32, ram: u32, hdd: u32, bw: u32) -> Self {
        ResourceVector { cpu, ram, hdd, bw }
    }

    pub const fn splat(v: u32) -> Self {
        ResourceVector::new(v, v, v, v)
    }

    pub fn from_array(a: [u32; NUM_RESOURCES]) -> Self {
        ResourceVector::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [u32; NUM_RESOURCES] {
        [self.cpu, self.ram, self.hdd, self.bw]
    }

    /// Component-wise `self <= other`.
    pub fn fits_within(self, other: ResourceVector) -> bool {
        self.cpu <= other.cpu
            && self.ram <= other.ram
            && self.hdd <= other.hdd
            && self.bw <= other.bw
    }

    pub fn checked_add(self, other: ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector::new(
            self.cpu.checked_add(other.cpu)?,
            self.ram.checked_add(other.ram)?,
            self.hdd.checked_add(other.hdd)?,
            self.bw.checked_add(other.bw)?,
        ))
    }

    pub fn checked_sub(self, other: ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector::new(
            self.cpu.checked_sub(other.cpu)?,
            self.ram.checked_sub(other.ram)?,
            self.hdd.checked_sub(other.hdd)?,
            self.bw.checked_sub(other.bw)?,
        ))
    }

    pub fn is_zero(self) -> bool {
        self == ResourceVector::ZERO
    }
}

/// One user connection request. Durations are in timesteps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRequest {
    pub id: u64,
    pub arrival_step: u64,
    pub demand: ResourceVector,
    pub true_duration: u32,
    pub predicted_duration: u32,
}

/// Converts a span in minutes into whole timesteps, rounding up.
pub fn minutes_to_steps(minutes: f64, time_step_secs: u32) -> u64 {
    (minutes * 60.0 / f64::from(time_step_secs)).ceil() as u64
}

pub fn steps_to_minutes(steps: f64, time_step_secs: u32) -> f64 {
    steps * f64::from(time_step_secs) / 60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Length of the arrival window, minutes.
    pub data_time: u32,
    /// Seconds per simulation step.
    pub time_step: u32,
    /// Poisson mean of arrivals per timestep.
    pub mean_req_num: f64,
    pub min_res_req: u32,
    pub max_res_req: u32,
    /// Minutes.
    pub min_user_duration: u32,
    /// Minutes.
    pub max_user_duration: u32,
    /// Standard deviation of the duration-prediction noise, minutes.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            data_time: 120,
            time_step: 12,
            mean_req_num: 3.0,
            min_res_req: 0,
            max_res_req: 10,
            min_user_duration: 1,
            max_user_duration: 120,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_step == 0 {
            return Err(Error::config("time_step must be positive"));
        }
        if !(self.mean_req_num.is_finite() && self.mean_req_num >= 0.0) {
            return Err(Error::config("mean_req_num must be finite and >= 0"));
        }
        if self.min_res_req > self.max_res_req {
            return Err(Error::config("min_res_req exceeds max_res_req"));
        }
        if self.min_user_duration == 0 {
            return Err(Error::config("min_user_duration must be at least 1 minute"));
        }
        if self.min_user_duration > self.max_user_duration {
            return Err(Error::config("min_user_duration exceeds max_user_duration"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    /// Number of timesteps during which requests arrive.
    pub fn arrival_steps(&self) -> u64 {
        minutes_to_steps(f64::from(self.data_time), self.time_step)
    }

    pub fn min_duration_steps(&self) -> u32 {
        minutes_to_steps(f64::from(self.min_user_duration), self.time_step) as u32
    }

    pub fn max_duration_steps(&self) -> u32 {
        minutes_to_steps(f64::from(self.max_user_duration), self.time_step) as u32
    }

    /// Expected number of generated requests.
    pub fn expected_requests(&self) -> f64 {
        self.mean_req_num * self.arrival_steps() as f64
    }

    /// Steady-state aggregate demand over total capacity, averaged over the
    /// four resources: `rate * E[duration] * E[demand_r] / (servers * capacity_r)`.
    pub fn load_fraction(&self, server_num: usize, capacity: ResourceVector) -> f64 {
        self.mean_req_num * self.per_request_load(server_num, capacity)
    }

    /// Arrival rate that yields `load` under [`WorkloadConfig::load_fraction`].
    pub fn mean_req_num_for_load(
        &self,
        load: f64,
        server_num: usize,
        capacity: ResourceVector,
    ) -> f64 {
        let unit = self.per_request_load(server_num, capacity);
        if unit > 0.0 {
            load / unit
        } else {
            0.0
        }
    }

    fn per_request_load(&self, server_num: usize, capacity: ResourceVector) -> f64 {
        let mean_duration =
            (f64::from(self.min_duration_steps()) + f64::from(self.max_duration_steps())) / 2.0;
        let mean_demand = (f64::from(self.min_res_req) + f64::from(self.max_res_req)) / 2.0;
        let inv_cap: f64 = capacity
            .to_array()
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / f64::from(c) })
            .sum::<f64>()
            / NUM_RESOURCES as f64;
        if server_num == 0 {
            return 0.0;
        }
        mean_duration * mean_demand * inv_cap / server_num as f64
    }
}

/// Poisson arrivals per step, uniform integer demands, uniform integer
/// durations; `predicted_duration` starts equal to `true_duration`.
pub fn generate_workload(config: &WorkloadConfig) -> Result<Vec<UserRequest>> {
    config.validate()?;
    let mut rng = seeds::rng(config.seed);
    let poisson = if config.mean_req_num > 0.0 {
        Some(
            Poisson::new(config.mean_req_num)
                .map_err(|e| Error::config(format!("mean_req_num: {e}")))?,
        )
    } else {
        None
    };
    let (lo, hi) = (config.min_duration_steps(), config.max_duration_steps());
    let mut requests = Vec::with_capacity(config.expected_requests().ceil() as usize);
    for step in 0..config.arrival_steps() {
        let count = match &poisson {
            Some(p) => p.sample(&mut rng) as u64,
            None => 0,
        };
        for _ in 0..count {
            let mut demand = [0u32; NUM_RESOURCES];
            for d in &mut demand {
                *d = rng.random_range(config.min_res_req..=config.max_res_req);
            }
            let duration = rng.random_range(lo..=hi);
            requests.push(UserRequest {
                id: requests.len() as u64,
                arrival_step: step,
                demand: ResourceVector::from_array(demand),
                true_duration: duration,
                predicted_duration: duration,
            });
        }
    }
    Ok(requests)
}

/// Replaces every `predicted_duration` by `true_duration + e`, where `e` is
/// Gaussian with standard deviation `sigma` minutes truncated at three
/// sigma, rounded to whole steps and clamped to the configured duration
/// range. `sigma == 0` is the identity on predictions (they are reset to
/// the true duration).
pub fn apply_prediction_noise(
    requests: &[UserRequest],
    sigma: f64,
    seed: u64,
    config: &WorkloadConfig,
) -> Result<Vec<UserRequest>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::config("noise sigma must be finite and >= 0"));
    }
    let (lo, hi) = (
        f64::from(config.min_duration_steps()),
        f64::from(config.max_duration_steps()),
    );
    if sigma == 0.0 {
        return Ok(requests
            .iter()
            .map(|r| UserRequest {
                predicted_duration: r.true_duration,
                ..r.clone()
            })
            .collect());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(format!("noise sigma: {e}")))?;
    let mut rng = seeds::rng(seed);
    let steps_per_minute = 60.0 / f64::from(config.time_step);
    Ok(requests
        .iter()
        .map(|r| {
            let e = loop {
                let e: f64 = normal.sample(&mut rng);
                if e.abs() <= 3.0 * sigma {
                    break e;
                }
            };
            let predicted = (f64::from(r.true_duration) + e * steps_per_minute)
                .round()
                .clamp(lo, hi);
            UserRequest {
                predicted_duration: predicted as u32,
                ..r.clone()
            }
        })
        .collect())
}
