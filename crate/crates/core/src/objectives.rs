//! Episode objectives and their per-step decompositions.
//!
//! `f_balance` is the time average of the mean (over the four resources) of
//! the population standard deviation of normalized utilization across
//! servers. `f_idle` is the time average of the mean ground-truth maximal
//! remaining duration per server, in minutes. Both are minimized.
//!
//! Time averages divide by the number of recorded snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::sim::EpisodeResult;
use crate::workload::NUM_RESOURCES;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Fitness<T: Scalar = f64> {
    pub f_balance: T,
    pub f_idle: T,
}

impl<T: Scalar> Fitness<T> {
    pub fn new(f_balance: T, f_idle: T) -> Self {
        Fitness { f_balance, f_idle }
    }

    pub fn objectives(&self) -> [T; 2] {
        [self.f_balance, self.f_idle]
    }

    pub fn is_finite(&self) -> bool {
        self.f_balance.is_finite() && self.f_idle.is_finite()
    }

    /// Expresses `f_balance` in resource units instead of capacity fractions.
    pub fn in_units(&self, capacity_scale: f64) -> Fitness<T> {
        Fitness::new(self.f_balance * T::of(capacity_scale), self.f_idle)
    }
}

/// Mean over resources of the population standard deviation across servers.
pub fn balance_step<T: Scalar>(snapshot: &[[T; NUM_RESOURCES]]) -> Result<T> {
    if snapshot.is_empty() {
        return Err(Error::config("balance_step needs at least one server"));
    }
    let n = T::of_u64(snapshot.len() as u64);
    let mut total = T::zero();
    for r in 0..NUM_RESOURCES {
        let mean = snapshot.iter().map(|row| row[r]).sum::<T>() / n;
        let var = snapshot
            .iter()
            .map(|row| (row[r] - mean) * (row[r] - mean))
            .sum::<T>()
            / n;
        total = total + var.sqrt();
    }
    Ok(total / T::of_u64(NUM_RESOURCES as u64))
}

/// Mean of the per-server maximal remaining durations.
pub fn idle_step<T: Scalar>(remaining: &[T]) -> Result<T> {
    if remaining.is_empty() {
        return Err(Error::config("idle_step needs at least one server"));
    }
    Ok(remaining.iter().copied().sum::<T>() / T::of_u64(remaining.len() as u64))
}

pub fn episode_fitness<T: Scalar>(result: &EpisodeResult) -> Result<Fitness<T>> {
    let steps = result.num_timesteps();
    if steps == 0 {
        return Err(Error::config("episode has no recorded timesteps"));
    }
    let mut balance = T::zero();
    let mut idle = T::zero();
    for t in 0..steps {
        balance = balance + balance_step(&result.utilization::<T>(t))?;
        idle = idle + idle_step(&result.remaining_minutes::<T>(t))?;
    }
    let steps = T::of_u64(steps as u64);
    Ok(Fitness::new(balance / steps, idle / steps))
}

/// Per-objective bounds for min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Normalizer<T: Scalar = f64> {
    pub min: Fitness<T>,
    pub max: Fitness<T>,
}

impl<T: Scalar> Normalizer<T> {
    /// Bounds spanning all finite fitness values in `values`.
    pub fn spanning<'a>(values: impl IntoIterator<Item = &'a Fitness<T>>) -> Option<Self> {
        let mut it = values.into_iter().filter(|f| f.is_finite());
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for f in it {
            lo = Fitness::new(lo.f_balance.min(f.f_balance), lo.f_idle.min(f.f_idle));
            hi = Fitness::new(hi.f_balance.max(f.f_balance), hi.f_idle.max(f.f_idle));
        }
        Some(Normalizer { min: lo, max: hi })
    }
}

fn min_max<T: Scalar>(v: T, lo: T, hi: T) -> T {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        T::zero()
    }
}

/// Weighted sum of min-max normalized objectives. A degenerate range
/// (min == max) contributes 0. Diagnostics only; selection never uses it.
pub fn scalarize<T: Scalar>(
    f: &Fitness<T>,
    w_balance: T,
    w_idle: T,
    normalizer: &Normalizer<T>,
) -> T {
    w_balance
        * min_max(
            f.f_balance,
            normalizer.min.f_balance,
            normalizer.max.f_balance,
        )
        + w_idle * min_max(f.f_idle, normalizer.min.f_idle, normalizer.max.f_idle)
}
