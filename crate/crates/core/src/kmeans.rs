//! Lloyd's k-means with k-means++ seeding.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia after every Lloyd iteration (assignment + update).
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(f64::NAN)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::rng(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        // total > 0 is guaranteed while fewer than `distinct` centroids exist
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < w {
                break;
            }
            target -= w;
        }
        let chosen = points[pick.expect("positive total weight")].clone();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(sq_dist(p, &chosen));
        }
        centroids.push(chosen);
    }
    centroids
}

/// Clusters `points` into `k` groups.
///
/// Stops when assignments repeat or after `max_iterations` Lloyd steps. An empty
/// cluster keeps its previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if points.is_empty() {
        return Err(Error::invalid("no points to cluster"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have inconsistent dimension"));
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the number of distinct values ({distinct})"
        )));
    }

    let mut centroids = seed_plus_plus(points, k, seed);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut inertia_history = Vec::new();
    let mut converged = false;

    for _ in 0..max_iterations.max(1) {
        let mut changed = false;
        for (slot, p) in assignments.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centroids);
            if *slot != c {
                *slot = c;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let inertia = points
            .iter()
            .zip(&assignments)
            .map(|(p, &c)| sq_dist(p, &centroids[c]))
            .sum();
        inertia_history.push(inertia);
    }

    Ok(KMeans {
        centroids,
        assignments,
        inertia_history,
        converged,
    })
}
