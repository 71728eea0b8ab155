use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{distance, sort_by_distance, Pool};
use crate::error::CatalogError;

/// Extra random-start PAM runs on top of the BUILD start.
const RESTARTS: usize = 8;
const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Ordered by mean perf, weakest first.
    pub pools: Vec<Pool>,
    /// Sum of distances to the assigned medoid.
    pub objective: f64,
    /// Objective after BUILD and after each accepted swap of the winning run.
    pub history: Vec<f64>,
}

struct Run {
    medoids: Vec<usize>,
    objective: f64,
    history: Vec<f64>,
}

/// Index of the nearest medoid; a medoid is always its own nearest, other
/// ties go to the smaller id (ids are indexed in sorted order).
fn nearest(i: usize, medoids: &[usize], dist: &[Vec<f64>]) -> usize {
    if let Some(pos) = medoids.iter().position(|&m| m == i) {
        return pos;
    }
    let mut best = 0;
    for (pos, &m) in medoids.iter().enumerate().skip(1) {
        let (d, b) = (dist[i][m], dist[i][medoids[best]]);
        if d < b || (d == b && m < medoids[best]) {
            best = pos;
        }
    }
    best
}

fn objective(medoids: &[usize], dist: &[Vec<f64>]) -> f64 {
    (0..dist.len())
        .map(|i| dist[i][medoids[nearest(i, medoids, dist)]])
        .sum()
}

fn build(k: usize, dist: &[Vec<f64>]) -> Vec<usize> {
    let n = dist.len();
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    while medoids.len() < k {
        let mut best: Option<(f64, usize)> = None;
        for c in (0..n).filter(|c| !medoids.contains(c)) {
            let mut trial = medoids.clone();
            trial.push(c);
            let obj = objective(&trial, dist);
            if best.is_none_or(|(b, _)| obj < b - IMPROVEMENT_EPS) {
                best = Some((obj, c));
            }
        }
        medoids.push(best.expect("k <= n").1);
    }
    medoids
}

/// Best-improvement swaps until none lowers the objective.
fn swap(mut medoids: Vec<usize>, dist: &[Vec<f64>]) -> Run {
    let n = dist.len();
    let mut current = objective(&medoids, dist);
    let mut history = vec![current];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for pos in 0..medoids.len() {
            for c in (0..n).filter(|c| !medoids.contains(c)) {
                let mut trial = medoids.clone();
                trial[pos] = c;
                let obj = objective(&trial, dist);
                if obj < current - IMPROVEMENT_EPS && best.is_none_or(|(b, _, _)| obj < b) {
                    best = Some((obj, pos, c));
                }
            }
        }
        match best {
            Some((obj, pos, c)) => {
                medoids[pos] = c;
                current = obj;
                history.push(obj);
            }
            None => break,
        }
    }
    Run {
        medoids,
        objective: current,
        history,
    }
}

/// k-medoids (BUILD + swap, plus seeded random restarts) under Euclidean
/// distance. Ids are processed in sorted order so ties resolve toward the
/// lexicographically smaller id.
pub fn cluster_pools(
    features: &BTreeMap<String, [f64; 3]>,
    k: usize,
    seed: u64,
) -> Result<Clustering, CatalogError> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(CatalogError::TooFewBackbones { k, n });
    }
    let ids: Vec<&String> = features.keys().collect();
    let points: Vec<&[f64; 3]> = features.values().collect();
    let dist: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| distance(a, b)).collect())
        .collect();

    let mut best = swap(build(k, &dist), &dist);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RESTARTS {
        let start = sample(&mut rng, n, k).into_vec();
        let run = swap(start, &dist);
        if run.objective < best.objective - IMPROVEMENT_EPS {
            best = run;
        }
    }

    let mut groups: Vec<Vec<String>> = vec![Vec::new(); k];
    for i in 0..n {
        groups[nearest(i, &best.medoids, &dist)].push(ids[i].clone());
    }
    let mut pools: Vec<(f64, Pool)> = best
        .medoids
        .iter()
        .zip(groups)
        .map(|(&m, mut members)| {
            sort_by_distance(&mut members, points[m], features);
            let mean_perf =
                members.iter().map(|id| features[id][0]).sum::<f64>() / members.len() as f64;
            (
                mean_perf,
                Pool {
                    medoid: ids[m].clone(),
                    members,
                },
            )
        })
        .collect();
    pools.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.medoid.cmp(&b.1.medoid)));
    Ok(Clustering {
        pools: pools.into_iter().map(|(_, p)| p).collect(),
        objective: best.objective,
        history: best.history,
    })
}
