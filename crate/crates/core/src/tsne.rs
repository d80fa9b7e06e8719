//! Exact t-SNE for 2-D maps of item embeddings.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// Input-space dissimilarity feeding the affinities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Squared Euclidean distance.
    Euclidean,
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::invalid(format!("unknown metric {s:?} (euclidean|cosine)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration_factor: f64,
    pub early_exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
    pub metric: Metric,
    /// Momentum 0 and no adaptive gains: plain gradient descent.
    pub test_mode: bool,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration_factor: 12.0,
            early_exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
            metric: Metric::Euclidean,
            test_mode: false,
        }
    }
}

impl TsneConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::invalid(format!("t-SNE needs at least 4 points, got {n}")));
        }
        if !(self.perplexity > 0.0) || self.perplexity >= (n as f64 - 1.0) / 3.0 {
            return Err(Error::invalid(format!(
                "perplexity {} must be in (0, {}) for {n} points",
                self.perplexity,
                (n as f64 - 1.0) / 3.0
            )));
        }
        if self.iterations == 0 || !(self.learning_rate > 0.0) || !(self.early_exaggeration_factor > 0.0) {
            return Err(Error::invalid("t-SNE iterations, learning rate and exaggeration must be positive"));
        }
        for m in [self.initial_momentum, self.final_momentum] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::invalid(format!("momentum {m} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub coordinates: Vec<[f64; 2]>,
    /// KL(P || Q) before each iteration's update, against the unexaggerated P.
    pub kl_history: Vec<f64>,
}

impl MapResult {
    pub fn to_tsv(&self, ids: &[String]) -> Result<String> {
        crate::error::check_dim("map ids", self.coordinates.len(), ids.len())?;
        let mut out = String::from("item_id\tx\ty\n");
        for (id, c) in ids.iter().zip(&self.coordinates) {
            out.push_str(&format!("{id}\t{}\t{}\n", c[0], c[1]));
        }
        Ok(out)
    }

    pub fn kl_tsv(&self) -> String {
        let mut out = String::from("iteration\tkl\n");
        for (t, kl) in self.kl_history.iter().enumerate() {
            out.push_str(&format!("{t}\t{kl}\n"));
        }
        out
    }
}

/// Joint affinities and the per-point bandwidth solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Symmetric n×n joint probabilities, zero diagonal.
    pub p: Vec<f64>,
    /// Precision β_i = 1 / (2σ_i²) per point.
    pub betas: Vec<f64>,
    /// Entropy (nats) of each conditional distribution.
    pub entropies: Vec<f64>,
}

const ENTROPY_TOLERANCE: f64 = 1e-5;
const BISECTION_STEPS: usize = 200;

fn dissimilarities(points: &[Vec<f64>], metric: Metric) -> Result<Vec<f64>> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("t-SNE points differ in dimension"));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("t-SNE input is not finite"));
    }
    let norms: Vec<f64> = points.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if metric == Metric::Cosine && norms.contains(&0.0) {
        return Err(Error::invalid("cosine metric needs non-zero vectors"));
    }
    Ok((0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let norms = &norms;
            (0..n).map(move |j| {
                let (a, b) = (&points[i], &points[j]);
                match metric {
                    Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>(),
                    Metric::Cosine => {
                        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                        (1.0 - dot / (norms[i] * norms[j])).max(0.0)
                    }
                }
            })
        })
        .collect())
}

/// Conditional distribution of row `i` at precision `beta`; returns entropy.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let shifted = d - min;
        let e = (-beta * shifted).exp();
        *o = e;
        sum += e;
        weighted += shifted * e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + beta * weighted / sum
}

/// Solves each point's bandwidth for the target perplexity by bisection on β
/// and symmetrizes: `P = (P_cond + P_condᵀ) / 2n`.
pub fn affinities(points: &[Vec<f64>], perplexity: f64, metric: Metric) -> Result<Affinities> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("affinities need at least 2 points"));
    }
    let dist = dissimilarities(points, metric)?;
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            let mut out = vec![0.0; n];
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut beta = 1.0;
            let mut h = conditional_row(row, i, beta, &mut out);
            for _ in 0..BISECTION_STEPS {
                if (h - target).abs() < ENTROPY_TOLERANCE {
                    break;
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                h = conditional_row(row, i, beta, &mut out);
            }
            if (h - target).abs() >= ENTROPY_TOLERANCE {
                return Err(Error::invalid(format!(
                    "perplexity {perplexity} infeasible for point {i} (entropy {h:.6} vs {target:.6}); are points identical?"
                )));
            }
            Ok((out, beta, h))
        })
        .collect::<Result<_>>()?;
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (rows[i].0[j] + rows[j].0[i]) * scale;
        }
    }
    Ok(Affinities {
        n,
        p,
        betas: rows.iter().map(|r| r.1).collect(),
        entropies: rows.iter().map(|r| r.2).collect(),
    })
}

/// Deterministic small Gaussian start for a point, derived from its content.
fn initial_position(point: &[f64], seed: u64) -> [f64; 2] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for x in point {
        h.update(x.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    let s = u64::from_le_bytes(digest[..8].try_into().unwrap());
    let mut r = rng::rng(s);
    let a: f64 = StandardNormal.sample(&mut r);
    let b: f64 = StandardNormal.sample(&mut r);
    [1e-2 * a, 1e-2 * b]
}

fn canonical_order(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// KL(P‖Q) for coordinates `y`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let (z, _) = student_sums(y);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                let pij = p[i * n + j];
                if j != i && pij > 0.0 {
                    let q = student(y[i], y[j]) / z;
                    s += pij * (pij / q).ln();
                }
            }
            s
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

fn student(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    1.0 / (1.0 + dx * dx + dy * dy)
}

fn student_sums(y: &[[f64; 2]]) -> (f64, Vec<f64>) {
    let n = y.len();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| j != i).map(|j| student(y[i], y[j])).sum())
        .collect();
    (rows.iter().sum(), rows)
}

/// Embeds `points` in two dimensions.
pub fn tsne(points: &[Vec<f64>], config: &TsneConfig) -> Result<MapResult> {
    let n = points.len();
    config.validate(n)?;
    let order = canonical_order(points);
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
    let aff = affinities(&sorted, config.perplexity, config.metric)?;
    let p = &aff.p;
    let mut y: Vec<[f64; 2]> = sorted.iter().map(|pt| initial_position(pt, config.seed)).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::with_capacity(config.iterations);

    for t in 0..config.iterations {
        let exaggeration = if t < config.early_exaggeration_iters {
            config.early_exaggeration_factor
        } else {
            1.0
        };
        let momentum = if config.test_mode {
            0.0
        } else if t < config.early_exaggeration_iters {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let (z, _) = student_sums(&y);
        let per: Vec<([f64; 2], f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                let mut kl = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let num = student(y[i], y[j]);
                    let q = num / z;
                    let pij = p[i * n + j];
                    if pij > 0.0 {
                        kl += pij * (pij / q).ln();
                    }
                    let m = 4.0 * (exaggeration * pij - q) * num;
                    g[0] += m * (y[i][0] - y[j][0]);
                    g[1] += m * (y[i][1] - y[j][1]);
                }
                (g, kl)
            })
            .collect();
        let kl: f64 = per.iter().map(|x| x.1).sum();
        if !kl.is_finite() {
            return Err(Error::Numerical(format!("t-SNE diverged at iteration {t}")));
        }
        kl_history.push(kl);
        for (i, (g, _)) in per.iter().enumerate() {
            for c in 0..2 {
                if !config.test_mode {
                    gains[i][c] = if (g[c] > 0.0) != (velocity[i][c] > 0.0) {
                        gains[i][c] + 0.2
                    } else {
                        (gains[i][c] * 0.8).max(0.01)
                    };
                }
                velocity[i][c] = momentum * velocity[i][c] - config.learning_rate * gains[i][c] * g[c];
                y[i][c] += velocity[i][c];
            }
        }
        let mean = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        for v in &mut y {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
    }
    let mut coordinates = vec![[0.0; 2]; n];
    for (k, &i) in order.iter().enumerate() {
        coordinates[i] = y[k];
    }
    Ok(MapResult {
        coordinates,
        kl_history,
    })
}

/// Uniform sample without replacement of `n` items with at least `min_sales`
/// purchases; returned in ascending index order.
pub fn sample_items(sales: &[usize], n: usize, min_sales: usize, seed: u64) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..sales.len()).filter(|&i| sales[i] >= min_sales).collect();
    if eligible.len() < n {
        return Err(Error::invalid(format!(
            "only {} items have at least {min_sales} sales; {n} requested",
            eligible.len()
        )));
    }
    let mut picked: Vec<usize> = index::sample(&mut rng::rng(seed), eligible.len(), n)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmeans::{kmeans, DEFAULT_MAX_ITERATIONS};
    use proptest::prelude::*;

    fn clusters(n: usize, d: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng::rng(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let pts = labels
            .iter()
            .map(|&l| {
                (0..d)
                    .map(|k| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        z + if k == 0 { sep * l as f64 } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        (pts, labels)
    }

    fn agreement(a: &[usize], b: &[usize]) -> f64 {
        let same = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64;
        same.max(1.0 - same)
    }

    #[test]
    fn affinities_are_normalized_and_hit_perplexity() {
        let (pts, _) = clusters(60, 5, 3.0, 1);
        let aff = affinities(&pts, 10.0, Metric::Euclidean).unwrap();
        let total: f64 = aff.p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for i in 0..60 {
            assert_eq!(aff.p[i * 60 + i], 0.0);
            for j in 0..60 {
                assert_eq!(aff.p[i * 60 + j], aff.p[j * 60 + i]);
                assert!(aff.p[i * 60 + j] >= 0.0);
            }
            assert!((aff.entropies[i].exp() - 10.0).abs() / 10.0 < 1e-3);
        }
    }

    #[test]
    fn identical_points_are_rejected() {
        let pts = vec![vec![1.0, 2.0]; 20];
        let config = TsneConfig {
            perplexity: 3.0,
            ..TsneConfig::default()
        };
        assert!(tsne(&pts, &config).is_err());
    }

    #[test]
    fn infeasible_perplexity_is_rejected() {
        let (pts, _) = clusters(10, 3, 1.0, 2);
        assert!(tsne(&pts, &TsneConfig::default()).is_err());
        assert!(tsne(&pts[..3], &TsneConfig { perplexity: 0.5, ..TsneConfig::default() }).is_err());
    }

    #[test]
    fn separated_clusters_are_recovered() {
        let (pts, labels) = clusters(200, 16, 10.0, 3);
        let config = TsneConfig {
            perplexity: 20.0,
            iterations: 400,
            seed: 5,
            ..TsneConfig::default()
        };
        let map = tsne(&pts, &config).unwrap();
        let coords: Vec<Vec<f64>> = map.coordinates.iter().map(|c| c.to_vec()).collect();
        let km = kmeans(&coords, 2, 1, DEFAULT_MAX_ITERATIONS).unwrap();
        assert!(agreement(&km.assignments, &labels) >= 0.95);
        assert!(map.kl_history.iter().all(|k| k.is_finite() && *k >= 0.0));
    }

    #[test]
    fn plain_phase_kl_is_non_increasing_in_test_mode() {
        let (pts, _) = clusters(80, 6, 4.0, 4);
        let config = TsneConfig {
            perplexity: 10.0,
            iterations: 200,
            early_exaggeration_iters: 50,
            learning_rate: 20.0,
            test_mode: true,
            ..TsneConfig::default()
        };
        let map = tsne(&pts, &config).unwrap();
        for w in map.kl_history[51..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn runs_are_deterministic_and_equivariant() {
        let (pts, _) = clusters(40, 4, 3.0, 6);
        let config = TsneConfig {
            perplexity: 5.0,
            iterations: 120,
            early_exaggeration_iters: 40,
            seed: 9,
            ..TsneConfig::default()
        };
        let a = tsne(&pts, &config).unwrap();
        assert_eq!(a, tsne(&pts, &config).unwrap());
        let perm: Vec<usize> = (0..40).map(|i| (i * 7 + 3) % 40).collect();
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let b = tsne(&shuffled, &config).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(b.coordinates[k], a.coordinates[i]);
        }
        assert_eq!(a.kl_history, b.kl_history);
    }

    #[test]
    fn cosine_metric_runs() {
        let (pts, _) = clusters(30, 4, 3.0, 7);
        let pts: Vec<Vec<f64>> = pts.into_iter().map(|p| p.iter().map(|x| x.abs() + 0.1).collect()).collect();
        let config = TsneConfig {
            perplexity: 5.0,
            iterations: 50,
            metric: Metric::Cosine,
            ..TsneConfig::default()
        };
        assert_eq!(tsne(&pts, &config).unwrap().coordinates.len(), 30);
    }

    #[test]
    fn sampling_examples() {
        let sales = [0, 10, 12, 3, 10, 40];
        assert_eq!(sample_items(&sales, 4, 10, 1).unwrap(), vec![1, 2, 4, 5]);
        assert_eq!(sample_items(&sales, 6, 0, 1).unwrap(), (0..6).collect::<Vec<_>>());
        assert!(sample_items(&sales, 5, 10, 1).is_err());
        let s = sample_items(&sales, 2, 0, 3).unwrap();
        assert_eq!(s, sample_items(&sales, 2, 0, 3).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn affinity_sum_and_perplexity(seed in any::<u64>(), perp in 2.0f64..8.0) {
            let (pts, _) = clusters(30, 3, 2.0, seed);
            let aff = affinities(&pts, perp, Metric::Euclidean).unwrap();
            prop_assert!((aff.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for h in &aff.entropies {
                prop_assert!((h.exp() - perp).abs() / perp < 1e-3);
            }
        }
    }
}
