//! NSGA-II building blocks over bi-objective (minimized) fitness values.

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::neural::PolicyGenome;
use crate::num::Scalar;
use crate::objectives::Fitness;

/// `a` is no worse than `b` in both objectives and strictly better in one.
pub fn dominates<T: Scalar>(a: &Fitness<T>, b: &Fitness<T>) -> bool {
    let (a, b) = (a.objectives(), b.objectives());
    a.iter().zip(&b).all(|(x, y)| x <= y) && a.iter().zip(&b).any(|(x, y)| x < y)
}

/// Fronts `S_1..S_L` as index lists into `fitness`, each in ascending index
/// order. Every index appears in exactly one front.
pub fn fast_nondominated_sort<T: Scalar>(fitness: &[Fitness<T>]) -> Vec<Vec<usize>> {
    let n = fitness.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in (p + 1)..n {
            if dominates(&fitness[p], &fitness[q]) {
                dominated_by[p].push(q);
                domination_count[q] += 1;
            } else if dominates(&fitness[q], &fitness[p]) {
                dominated_by[q].push(p);
                domination_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Front rank (1-based) of every individual.
pub fn ranks(fronts: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut rank = vec![0; n];
    for (k, front) in fronts.iter().enumerate() {
        for &i in front {
            rank[i] = k + 1;
        }
    }
    rank
}

/// Crowding distance of each member of `front`, in the order of `front`.
///
/// Fronts of one or two members are all boundary (infinite). Otherwise, per
/// objective, the extreme members get infinity and interior members add the
/// normalized gap between their neighbours. An objective with zero range
/// over the front contributes nothing, not even boundary infinities.
pub fn crowding_distance<T: Scalar>(fitness: &[Fitness<T>], front: &[usize]) -> Vec<T> {
    let m = front.len();
    if m <= 2 {
        return vec![T::infinity(); m];
    }
    let mut dist = vec![T::zero(); m];
    for obj in 0..2 {
        let value = |k: usize| fitness[front[k]].objectives()[obj];
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            value(a)
                .partial_cmp(&value(b))
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let (lo, hi) = (value(order[0]), value(order[m - 1]));
        let range = hi - lo;
        if range.partial_cmp(&T::zero()) != Some(Ordering::Greater) {
            continue;
        }
        dist[order[0]] = T::infinity();
        dist[order[m - 1]] = T::infinity();
        for w in order.windows(3) {
            let gap = (value(w[2]) - value(w[0])) / range;
            dist[w[1]] = dist[w[1]] + gap;
        }
    }
    dist
}

/// Picks `elite_count` indices: whole fronts in rank order, then the best of
/// the first front that does not fit by descending crowding distance. Ties
/// on crowding fall back to the objective values, then to the index.
pub fn select_elites<T: Scalar>(fitness: &[Fitness<T>], elite_count: usize) -> Result<Vec<usize>> {
    if elite_count > fitness.len() {
        return Err(Error::config(format!(
            "cannot select {elite_count} elites from {} individuals",
            fitness.len()
        )));
    }
    let mut elites = Vec::with_capacity(elite_count);
    for front in fast_nondominated_sort(fitness) {
        let room = elite_count - elites.len();
        if room == 0 {
            break;
        }
        if front.len() <= room {
            elites.extend(front);
            continue;
        }
        let crowd = crowding_distance(fitness, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| {
            crowd[b]
                .partial_cmp(&crowd[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| lexicographic(&fitness[front[a]], &fitness[front[b]]))
                .then(front[a].cmp(&front[b]))
        });
        elites.extend(order.into_iter().take(room).map(|k| front[k]));
    }
    Ok(elites)
}

fn lexicographic<T: Scalar>(a: &Fitness<T>, b: &Fitness<T>) -> Ordering {
    a.f_balance
        .partial_cmp(&b.f_balance)
        .unwrap_or(Ordering::Equal)
        .then(a.f_idle.partial_cmp(&b.f_idle).unwrap_or(Ordering::Equal))
}

/// Swaps the tails of two genomes after `cut`:
/// `a[..cut] ++ b[cut..]` and `b[..cut] ++ a[cut..]`.
pub fn crossover_at<T: Scalar>(
    a: &PolicyGenome<T>,
    b: &PolicyGenome<T>,
    cut: usize,
) -> Result<(PolicyGenome<T>, PolicyGenome<T>)> {
    if a.shape() != b.shape() {
        return Err(Error::config("crossover parents differ in shape"));
    }
    if cut > a.len() {
        return Err(Error::config(format!(
            "cut {cut} beyond genome length {}",
            a.len()
        )));
    }
    let (wa, wb) = (a.weights(), b.weights());
    let child_a = wa[..cut].iter().chain(&wb[cut..]).copied().collect();
    let child_b = wb[..cut].iter().chain(&wa[cut..]).copied().collect();
    Ok((
        PolicyGenome::new(a.shape(), child_a)?,
        PolicyGenome::new(a.shape(), child_b)?,
    ))
}

/// One-point crossover with the cut drawn uniformly from `1..len`.
pub fn crossover_onepoint<T: Scalar>(
    a: &PolicyGenome<T>,
    b: &PolicyGenome<T>,
    rng: &mut impl Rng,
) -> Result<(PolicyGenome<T>, PolicyGenome<T>)> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "crossover parents have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Ok((a.clone(), b.clone()));
    }
    let cut = rng.random_range(1..a.len());
    crossover_at(a, b, cut)
}

/// Each gene independently, with probability `prob`, is redrawn from a
/// Gaussian centred on its current value with standard deviation `sigma`.
pub fn mutate_gaussian<T: Scalar>(
    genome: &PolicyGenome<T>,
    prob: f64,
    sigma: f64,
    rng: &mut impl Rng,
) -> PolicyGenome<T> {
    let weights = genome
        .weights()
        .iter()
        .map(|&w| {
            if rng.random::<f64>() < prob {
                let z: f64 = StandardNormal.sample(rng);
                w + T::of(sigma * z)
            } else {
                w
            }
        })
        .collect();
    PolicyGenome::new(genome.shape(), weights).expect("mutation keeps shape and finiteness")
}

/// Area dominated by `points` and bounded by `reference` (both objectives
/// minimized). Points not strictly better than the reference in both
/// objectives contribute nothing.
pub fn hypervolume_2d<T: Scalar>(points: &[Fitness<T>], reference: Fitness<T>) -> T {
    let mut pts: Vec<(T, T)> = points
        .iter()
        .filter(|p| p.f_balance < reference.f_balance && p.f_idle < reference.f_idle)
        .map(|p| (p.f_balance, p.f_idle))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut area = T::zero();
    let mut best_y = reference.f_idle;
    for (x, y) in pts {
        if y < best_y {
            area = area + (reference.f_balance - x) * (best_y - y);
            best_y = y;
        }
    }
    area
}
