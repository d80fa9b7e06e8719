//! Planted-factor world: latent items and customers with known purchase
//! probabilities, attribute tags that carry a controllable amount of latent
//! signal, and exact oracle scores.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::catalog::CatalogRecord;
use crate::error::{Error, Result};
use crate::evaluation::auc;
use crate::network::FeatureChannel;
use crate::purchases::PurchaseMatrix;
use crate::rng;
use crate::training::sigmoid;

pub const FIBERS: [&str; 12] = [
    "acrylic", "cashmere", "cotton", "elastane", "linen", "lyocell", "modal", "nylon", "polyester", "silk", "viscose", "wool",
];

const PATTERN_COVERAGE: f64 = 1.0 / 3.0;
const FIBER_COVERAGE: f64 = 0.65;
/// Largest world scored exhaustively by the oracle.
pub const ORACLE_MAX_PAIRS: usize = 10_000_000;
const CALIBRATION_MAX_PAIRS: usize = 4_000_000;

const STREAM_LATENTS: u64 = 1;
const STREAM_TAGS: u64 = 2;
const STREAM_FEATURES: u64 = 3;
const STREAM_CALIBRATION: u64 = 4;
const STREAM_ROWS: u64 = 5;
const STREAM_ORACLE: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_items: usize,
    pub n_customers: usize,
    pub rank: usize,
    /// Class counts for brand, commodity group, main color and pattern.
    pub tag_sizes: [usize; 4],
    /// Softmax temperature of the catalog attributes; lower carries more signal.
    pub tau_a: f64,
    /// Class counts of the second channel's tag families (exported as dense features).
    pub feature_sizes: Vec<usize>,
    pub tau_b: f64,
    pub noise_level: f64,
    pub target_density: f64,
    /// Spread of the per-customer bias around the calibrated offset.
    pub bias_sd: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_items: 500,
            n_customers: 200,
            rank: 8,
            tag_sizes: [40, 20, 12, 8],
            tau_a: 0.1,
            feature_sizes: vec![16; 4],
            tau_b: 0.5,
            noise_level: 0.0,
            target_density: 0.02,
            bias_sd: 0.5,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.n_customers == 0 || self.rank == 0 {
            return Err(Error::invalid("items, customers and rank must be positive"));
        }
        if self.tag_sizes.contains(&0) || self.feature_sizes.contains(&0) {
            return Err(Error::invalid("tag family sizes must be positive"));
        }
        if !(self.tau_a > 0.0 && self.tau_b > 0.0) {
            return Err(Error::invalid("temperatures must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::invalid(format!("noise level {} outside [0, 1]", self.noise_level)));
        }
        if !(self.target_density > 0.0 && self.target_density < 0.5) {
            return Err(Error::invalid(format!(
                "target density {} outside (0, 0.5)",
                self.target_density
            )));
        }
        if !(self.bias_sd >= 0.0 && self.bias_sd.is_finite()) {
            return Err(Error::invalid("bias_sd must be non-negative"));
        }
        Ok(())
    }
}

/// Linear-plus-offset scores for one tag family: `size × (rank + 1)`.
/// Each class has a Gaussian center on a block of latent coordinates; its score is
/// `c·u − |c|²/2`, so at low temperature the tag is the nearest center.
#[derive(Debug, Clone, PartialEq)]
pub struct TagMap {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl TagMap {
    /// Centers live on coordinates `d` with `d % blocks == block % blocks`.
    fn draw(size: usize, rank: usize, block: usize, blocks: usize, r: &mut rng::Rng) -> Self {
        let blocks = blocks.clamp(1, rank);
        let mut weights = Vec::with_capacity(size * (rank + 1));
        for _ in 0..size {
            let center: Vec<f64> = (0..rank)
                .map(|d| {
                    let z: f64 = StandardNormal.sample(&mut *r);
                    if d % blocks == block % blocks { z } else { 0.0 }
                })
                .collect();
            let offset = -0.5 * dot(&center, &center);
            weights.extend(center);
            weights.push(offset);
        }
        TagMap { size, weights }
    }

    fn logits(&self, u: &[f64], tau: f64) -> Vec<f64> {
        let w = u.len() + 1;
        (0..self.size)
            .map(|k| {
                let row = &self.weights[k * w..(k + 1) * w];
                (row[..u.len()].iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + row[u.len()]) / tau
            })
            .collect()
    }

    fn sample(&self, u: &[f64], tau: f64, r: &mut rng::Rng) -> usize {
        let logits = self.logits(u, tau);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut x = r.random::<f64>() * total;
        for (k, w) in weights.iter().enumerate() {
            if x < *w {
                return k;
            }
            x -= w;
        }
        self.size - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedWorld {
    pub config: WorldConfig,
    /// `n_items × rank`.
    pub item_latents: Vec<f64>,
    /// `n_customers × rank`.
    pub customer_latents: Vec<f64>,
    /// Calibrated `c_j`.
    pub customer_biases: Vec<f64>,
    pub tag_maps: Vec<TagMap>,
    /// Per family, per item; pattern may be absent.
    pub tags: Vec<Vec<Option<usize>>>,
    pub prices: Vec<f64>,
    /// Integer percentages per fiber, absent for uncovered items.
    pub fibers: Vec<Option<[u8; 12]>>,
    pub feature_maps: Vec<TagMap>,
    pub feature_tags: Vec<Vec<usize>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussians(n: usize, r: &mut rng::Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *r)).collect()
}

/// Integer percentages proportional to `weights`, summing to 100 (largest remainder).
fn percentages(weights: &[f64]) -> Vec<u8> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| 100.0 * w / total).collect();
    let mut out: Vec<u8> = exact.iter().map(|e| e.floor() as u8).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = 100 - out.iter().map(|&v| v as usize).sum::<usize>();
    for &k in order.iter().cycle().take(missing) {
        out[k] += 1;
    }
    out
}

impl PlantedWorld {
    pub fn generate(config: &WorldConfig) -> Result<Self> {
        config.validate()?;
        let (n, k, r) = (config.n_items, config.n_customers, config.rank);
        let mut lat = rng::derived(config.seed, &[STREAM_LATENTS]);
        let item_latents = gaussians(n * r, &mut lat);
        let customer_latents = gaussians(k * r, &mut lat);
        let spread: Vec<f64> = gaussians(k, &mut lat).into_iter().map(|z| config.bias_sd * z).collect();

        let mut tr = rng::derived(config.seed, &[STREAM_TAGS]);
        let tag_maps: Vec<TagMap> = config
            .tag_sizes
            .iter()
            .enumerate()
            .map(|(f, &s)| TagMap::draw(s, r, f, config.tag_sizes.len(), &mut tr))
            .collect();
        let price_map = gaussians(r, &mut tr);
        let fiber_map = TagMap::draw(FIBERS.len(), r, 0, 1, &mut tr);
        let mut tags: Vec<Vec<Option<usize>>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
        let mut prices = Vec::with_capacity(n);
        let mut fibers = Vec::with_capacity(n);
        let scale = 1.0 / (r as f64).sqrt();
        for i in 0..n {
            let u = &item_latents[i * r..(i + 1) * r];
            for (f, map) in tag_maps.iter().enumerate() {
                let label = map.sample(u, config.tau_a, &mut tr);
                let present = f != 3 || tr.random::<f64>() < PATTERN_COVERAGE;
                tags[f].push(present.then_some(label));
            }
            let noise: f64 = StandardNormal.sample(&mut tr);
            let ln_price = 4.0 + 0.5 * scale * dot(&price_map, u) + 0.25 * config.tau_a * noise;
            prices.push(((ln_price.exp() * 100.0).round() / 100.0).max(0.01));
            if tr.random::<f64>() < FIBER_COVERAGE {
                let logits = fiber_map.logits(u, config.tau_a);
                let gumbel: Vec<f64> = (0..FIBERS.len())
                    .map(|_| -(-(tr.random::<f64>().max(1e-300)).ln()).ln())
                    .collect();
                let mut order: Vec<usize> = (0..FIBERS.len()).collect();
                order.sort_by(|&a, &b| (logits[b] + gumbel[b]).total_cmp(&(logits[a] + gumbel[a])).then(a.cmp(&b)));
                let parts = 1 + tr.random_range(0..3usize);
                let chosen = &order[..parts];
                let top = chosen.iter().map(|&c| logits[c]).fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = chosen.iter().map(|&c| (logits[c] - top).exp().max(0.05)).collect();
                let mut comp = [0u8; 12];
                for (&c, p) in chosen.iter().zip(percentages(&weights)) {
                    comp[c] = p;
                }
                fibers.push(Some(comp));
            } else {
                fibers.push(None);
            }
        }

        let mut fr = rng::derived(config.seed, &[STREAM_FEATURES]);
        let feature_maps: Vec<TagMap> = config
            .feature_sizes
            .iter()
            .enumerate()
            .map(|(f, &s)| TagMap::draw(s, r, f, config.feature_sizes.len(), &mut fr))
            .collect();
        let feature_tags = feature_maps
            .iter()
            .map(|map| (0..n).map(|i| map.sample(&item_latents[i * r..(i + 1) * r], config.tau_b, &mut fr)).collect())
            .collect();

        let mut world = PlantedWorld {
            config: config.clone(),
            item_latents,
            customer_latents,
            customer_biases: spread,
            tag_maps,
            tags,
            prices,
            fibers,
            feature_maps,
            feature_tags,
        };
        world.calibrate_biases()?;
        Ok(world)
    }

    /// Shifts every customer bias by one offset so the mean probability hits the target.
    fn calibrate_biases(&mut self) -> Result<()> {
        let (n, k, r) = (self.config.n_items, self.config.n_customers, self.config.rank);
        let pairs: Vec<(usize, usize)> = if n * k <= CALIBRATION_MAX_PAIRS {
            (0..n).flat_map(|i| (0..k).map(move |j| (i, j))).collect()
        } else {
            let mut cr = rng::derived(self.config.seed, &[STREAM_CALIBRATION]);
            (0..CALIBRATION_MAX_PAIRS).map(|_| (cr.random_range(0..n), cr.random_range(0..k))).collect()
        };
        let base: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| {
                dot(&self.item_latents[i * r..(i + 1) * r], &self.customer_latents[j * r..(j + 1) * r])
                    + self.customer_biases[j]
            })
            .collect();
        let mean_at = |c: f64| {
            let p: Vec<f64> = base.par_iter().map(|z| sigmoid(z + c)).collect();
            p.iter().sum::<f64>() / base.len() as f64
        };
        let target = self.config.target_density;
        let (mut lo, mut hi) = (-60.0, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let offset = 0.5 * (lo + hi);
        let achieved = mean_at(offset);
        if (achieved - target).abs() > 0.02 * target {
            return Err(Error::invalid(format!(
                "target density {target} is infeasible (reached {achieved})"
            )));
        }
        self.customer_biases.iter_mut().for_each(|b| *b += offset);
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    pub fn n_customers(&self) -> usize {
        self.config.n_customers
    }

    pub fn item_latent(&self, i: usize) -> &[f64] {
        let r = self.config.rank;
        &self.item_latents[i * r..(i + 1) * r]
    }

    pub fn customer_latent(&self, j: usize) -> &[f64] {
        let r = self.config.rank;
        &self.customer_latents[j * r..(j + 1) * r]
    }

    /// `p*_ij = (1 − λ) σ(u_i·v_j + c_j) + λ ρ`.
    pub fn probability(&self, i: usize, j: usize) -> f64 {
        let clean = sigmoid(dot(self.item_latent(i), self.customer_latent(j)) + self.customer_biases[j]);
        let l = self.config.noise_level;
        if l == 1.0 {
            self.config.target_density
        } else {
            (1.0 - l) * clean + l * self.config.target_density
        }
    }

    pub fn mean_probability(&self) -> f64 {
        let k = self.n_customers();
        (0..self.n_items())
            .into_par_iter()
            .map(|i| (0..k).map(|j| self.probability(i, j)).sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum::<f64>()
            / (self.n_items() * k) as f64
    }

    pub fn item_ids(&self) -> Vec<String> {
        (0..self.n_items()).map(item_id).collect()
    }

    pub fn customer_ids(&self) -> Vec<String> {
        (0..self.n_customers()).map(customer_id).collect()
    }

    /// Independent Bernoulli(p*) draws.
    pub fn sample_purchases(&self, seed: u64) -> Result<PurchaseMatrix> {
        sample_matrix(self.item_ids(), self.customer_ids(), |i, j| self.probability(i, j), seed)
    }

    /// True probabilities and fresh labels for every (item, customer) pair given.
    fn oracle_pairs(&self, items: &[usize], customers: &[usize], seed: u64) -> Result<(Vec<f64>, Vec<bool>)> {
        if items.len() * customers.len() > ORACLE_MAX_PAIRS {
            return Err(Error::invalid(format!(
                "oracle limited to {ORACLE_MAX_PAIRS} pairs, got {}",
                items.len() * customers.len()
            )));
        }
        let per: Vec<(Vec<f64>, Vec<bool>)> = items
            .par_iter()
            .map(|&i| {
                let mut r = rng::derived(seed, &[STREAM_ORACLE, i as u64]);
                customers
                    .iter()
                    .map(|&j| {
                        let p = self.probability(i, j);
                        (p, r.random::<f64>() < p)
                    })
                    .unzip()
            })
            .collect();
        let mut p = Vec::new();
        let mut y = Vec::new();
        for (a, b) in per {
            p.extend(a);
            y.extend(b);
        }
        Ok((p, y))
    }

    /// AUC of the true probabilities against freshly sampled labels over the
    /// given block of pairs.
    pub fn oracle_auc(&self, items: &[usize], customers: &[usize], seed: u64) -> Result<f64> {
        let (p, y) = self.oracle_pairs(items, customers, seed)?;
        auc(&p, &y)
    }

    /// AUC of the true probabilities against the labels in `matrix`.
    pub fn bayes_auc(&self, matrix: &PurchaseMatrix, items: &[usize], customers: &[usize]) -> Result<f64> {
        let (p, y): (Vec<f64>, Vec<bool>) = items
            .iter()
            .flat_map(|&i| customers.iter().map(move |&j| (self.probability(i, j), matrix.contains(i, j))))
            .unzip();
        auc(&p, &y)
    }

    /// Ratio of expectations of the Mann–Whitney count and of the positive ×
    /// negative pair count under Bernoulli(p*) labels.
    pub fn expected_auc(&self, items: &[usize], customers: &[usize]) -> f64 {
        let mut p: Vec<f64> = items
            .iter()
            .flat_map(|&i| customers.iter().map(move |&j| self.probability(i, j)))
            .collect();
        expected_auc_of(&mut p)
    }

    /// Mean cross entropy of the true probabilities on the labels in `matrix`.
    pub fn oracle_loss(&self, matrix: &PurchaseMatrix, items: &[usize], customers: &[usize]) -> Result<f64> {
        let (p, y): (Vec<f64>, Vec<bool>) = items
            .iter()
            .flat_map(|&i| customers.iter().map(move |&j| (self.probability(i, j), matrix.contains(i, j))))
            .unzip();
        Ok(crate::training::cross_entropy(&p, &y)?.mean)
    }

    pub fn catalog_records(&self) -> Vec<CatalogRecord> {
        let names = ["brand", "group", "color", "pattern"];
        (0..self.n_items())
            .map(|i| {
                let label = |f: usize| self.tags[f][i].map(|c| format!("{}{c:02}", names[f]));
                CatalogRecord {
                    item_id: item_id(i),
                    brand: label(0),
                    commodity_group: label(1),
                    color: label(2),
                    pattern: label(3),
                    price: Some(self.prices[i]),
                    fibers: self.fibers[i].map(|comp| {
                        FIBERS
                            .iter()
                            .zip(comp)
                            .filter(|(_, p)| *p > 0)
                            .map(|(name, p)| (name.to_string(), p as f64 / 100.0))
                            .collect::<BTreeMap<_, _>>()
                    }),
                }
            })
            .collect()
    }

    /// Second-channel tags as concatenated one-hot vectors.
    pub fn features(&self) -> FeatureChannel {
        let width: usize = self.config.feature_sizes.iter().sum();
        let mut channel = FeatureChannel::new(width);
        for i in 0..self.n_items() {
            let mut v = vec![0.0; width];
            let mut offset = 0;
            for (f, tags) in self.feature_tags.iter().enumerate() {
                v[offset + tags[i]] = 1.0;
                offset += self.config.feature_sizes[f];
            }
            channel.insert(item_id(i), &v).expect("fixed width");
        }
        channel
    }

    pub fn manifest(&self) -> String {
        #[derive(Serialize)]
        struct Manifest<'a> {
            world: &'a WorldConfig,
            mean_probability: f64,
            catalog_items: usize,
            pattern_coverage: f64,
            fiber_coverage: f64,
        }
        let n = self.n_items() as f64;
        toml::to_string(&Manifest {
            world: &self.config,
            mean_probability: self.mean_probability(),
            catalog_items: self.n_items(),
            pattern_coverage: self.tags[3].iter().filter(|t| t.is_some()).count() as f64 / n,
            fiber_coverage: self.fibers.iter().filter(|f| f.is_some()).count() as f64 / n,
        })
        .expect("manifest serializes")
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut a = Artifact::new("world");
        let c = &self.config;
        a.push_meta("config", toml::to_string(c).expect("config serializes").replace('\n', "; "));
        a.push_blob("item_latents", self.item_latents.clone());
        a.push_blob("customer_latents", self.customer_latents.clone());
        a.push_blob("customer_biases", self.customer_biases.clone());
        for (f, m) in self.tag_maps.iter().enumerate() {
            a.push_blob(&format!("tag_map{f}"), m.weights.clone());
            a.push_blob(&format!("tags{f}"), self.tags[f].iter().map(|t| t.map_or(-1.0, |v| v as f64)).collect());
        }
        a.push_blob("prices", self.prices.clone());
        a.push_blob(
            "fibers",
            self.fibers
                .iter()
                .flat_map(|f| match f {
                    Some(c) => c.iter().map(|&p| p as f64).collect::<Vec<_>>(),
                    None => vec![-1.0; 12],
                })
                .collect(),
        );
        for (f, m) in self.feature_maps.iter().enumerate() {
            a.push_blob(&format!("feature_map{f}"), m.weights.clone());
            a.push_blob(&format!("feature_tags{f}"), self.feature_tags[f].iter().map(|&v| v as f64).collect());
        }
        a
    }

    pub fn from_artifact(a: &Artifact) -> Result<Self> {
        let config: WorldConfig = toml::from_str(&a.meta("config")?.replace("; ", "\n"))
            .map_err(|e| Error::format("world", format!("bad config: {e}")))?;
        config.validate()?;
        let (n, r) = (config.n_items, config.rank);
        let blob = |name: &str, len: usize| -> Result<Vec<f64>> {
            let b = a.blob(name)?;
            crate::error::check_dim("world blob", len, b.len())?;
            Ok(b.to_vec())
        };
        let index = |v: f64, size: usize| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < size {
                Ok(v as usize)
            } else {
                Err(Error::format("world", format!("tag {v} out of range")))
            }
        };
        let mut tag_maps = Vec::new();
        let mut tags = Vec::new();
        for (f, &s) in config.tag_sizes.iter().enumerate() {
            tag_maps.push(TagMap {
                size: s,
                weights: blob(&format!("tag_map{f}"), s * (r + 1))?,
            });
            tags.push(
                blob(&format!("tags{f}"), n)?
                    .into_iter()
                    .map(|v| if v < 0.0 { Ok(None) } else { index(v, s).map(Some) })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let fibers = blob("fibers", n * 12)?
            .chunks(12)
            .map(|c| {
                if c[0] < 0.0 {
                    None
                } else {
                    let mut comp = [0u8; 12];
                    for (d, &v) in comp.iter_mut().zip(c) {
                        *d = v as u8;
                    }
                    Some(comp)
                }
            })
            .collect();
        let mut feature_maps = Vec::new();
        let mut feature_tags = Vec::new();
        for (f, &s) in config.feature_sizes.iter().enumerate() {
            feature_maps.push(TagMap {
                size: s,
                weights: blob(&format!("feature_map{f}"), s * (r + 1))?,
            });
            feature_tags.push(
                blob(&format!("feature_tags{f}"), n)?
                    .into_iter()
                    .map(|v| index(v, s))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(PlantedWorld {
            item_latents: blob("item_latents", n * r)?,
            customer_latents: blob("customer_latents", config.n_customers * r)?,
            customer_biases: blob("customer_biases", config.n_customers)?,
            tag_maps,
            tags,
            prices: blob("prices", n)?,
            fibers,
            feature_maps,
            feature_tags,
            config,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_artifact().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_artifact(&Artifact::read(path, "world")?)
    }
}

pub fn item_id(i: usize) -> String {
    format!("sku{i:06}")
}

pub fn customer_id(j: usize) -> String {
    format!("cust{j:06}")
}

/// Expected-value AUC for probabilities `p` (reordered in place).
pub fn expected_auc_of(p: &mut [f64]) -> f64 {
    p.sort_by(f64::total_cmp);
    let (mut num, mut below_neg) = (0.0, 0.0);
    let mut start = 0;
    while start < p.len() {
        let mut end = start;
        while end < p.len() && p[end] == p[start] {
            end += 1;
        }
        let m = (end - start) as f64;
        let v = p[start];
        // strictly lower negatives, plus half of the tied ones (excluding self)
        num += m * v * below_neg + 0.5 * m * (m - 1.0) * v * (1.0 - v);
        below_neg += m * (1.0 - v);
        start = end;
    }
    let sp: f64 = p.iter().sum();
    let sn: f64 = p.iter().map(|v| 1.0 - v).sum();
    let same: f64 = p.iter().map(|v| v * (1.0 - v)).sum();
    num / (sp * sn - same)
}

/// Independent Bernoulli draws with per-row derived seeds.
pub fn sample_matrix(
    item_ids: Vec<String>,
    customer_ids: Vec<String>,
    probability: impl Fn(usize, usize) -> f64 + Sync,
    seed: u64,
) -> Result<PurchaseMatrix> {
    let k = customer_ids.len();
    let rows: Vec<Vec<(usize, usize)>> = (0..item_ids.len())
        .into_par_iter()
        .map(|i| {
            let mut r = rng::derived(seed, &[STREAM_ROWS, i as u64]);
            (0..k).filter(|&j| r.random::<f64>() < probability(i, j)).map(|j| (i, j)).collect()
        })
        .collect();
    Ok(PurchaseMatrix::from_pairs(item_ids, customer_ids, rows.into_iter().flatten())?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use proptest::prelude::*;

    fn small(seed: u64) -> WorldConfig {
        WorldConfig {
            n_items: 200,
            n_customers: 80,
            rank: 4,
            seed,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn density_is_calibrated() {
        for density in [0.02, 0.2, 1.14e-4] {
            let w = PlantedWorld::generate(&WorldConfig {
                target_density: density,
                ..small(1)
            })
            .unwrap();
            assert!((w.mean_probability() - density).abs() < 0.02 * density);
        }
    }

    #[test]
    fn full_noise_is_flat() {
        let w = PlantedWorld::generate(&WorldConfig {
            noise_level: 1.0,
            ..small(2)
        })
        .unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(w.probability(i, j), 0.02);
            }
        }
        let items: Vec<usize> = (0..200).collect();
        let customers: Vec<usize> = (0..80).collect();
        // 16000 pairs, ~320 positives: σ(AUC) ≈ 0.017
        assert!((w.oracle_auc(&items, &customers, 3).unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn antipodal_customers_reverse_rankings() {
        let mut w = PlantedWorld::generate(&WorldConfig {
            rank: 1,
            ..small(3)
        })
        .unwrap();
        w.customer_latents[1] = -w.customer_latents[0];
        let rank = |j: usize| {
            let mut items: Vec<usize> = (0..200).collect();
            items.sort_by(|&a, &b| w.probability(a, j).total_cmp(&w.probability(b, j)));
            items
        };
        let mut reversed = rank(1);
        reversed.reverse();
        assert_eq!(rank(0), reversed);
    }

    #[test]
    fn degenerate_probabilities_give_empty_and_full_matrices() {
        let ids = |p: &str| (0..7).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        assert_eq!(sample_matrix(ids("i"), ids("c"), |_, _| 0.0, 1).unwrap().nnz(), 0);
        assert_eq!(sample_matrix(ids("i"), ids("c"), |_, _| 1.0, 1).unwrap().nnz(), 49);
    }

    #[test]
    fn empirical_density_within_three_sigma() {
        let w = PlantedWorld::generate(&small(4)).unwrap();
        let m = w.sample_purchases(5).unwrap();
        let n = (200 * 80) as f64;
        let mean = w.mean_probability();
        let var: f64 = (0..200)
            .flat_map(|i| (0..80).map(move |j| (i, j)))
            .map(|(i, j)| {
                let p = w.probability(i, j);
                p * (1.0 - p)
            })
            .sum();
        assert!((m.nnz() as f64 - mean * n).abs() <= 3.0 * var.sqrt());
        assert_eq!(m, w.sample_purchases(5).unwrap());
    }

    #[test]
    fn noiseless_oracle_is_sharp() {
        let w = PlantedWorld::generate(&small(6)).unwrap();
        let items: Vec<usize> = (0..200).collect();
        let customers: Vec<usize> = (0..80).collect();
        assert!(w.oracle_auc(&items, &customers, 1).unwrap() > 0.9);
        assert!(w.expected_auc(&items, &customers) > 0.9);
    }

    #[test]
    fn single_positive_auc_is_its_rank() {
        let p = [0.1, 0.7, 0.3, 0.5];
        let y = [false, false, true, false];
        // 0.3 beats only 0.1
        assert_eq!(auc(&p, &y).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn expected_auc_matches_enumeration() {
        // exhaustive over all 2^4 labelings
        let p = [0.1, 0.6, 0.6, 0.9];
        let (mut num, mut den) = (0.0, 0.0);
        for mask in 0u32..16 {
            let y: Vec<bool> = (0..4).map(|k| mask & (1 << k) != 0).collect();
            let prob: f64 = (0..4).map(|k| if y[k] { p[k] } else { 1.0 - p[k] }).product();
            let (mut c, mut pn) = (0.0, 0.0);
            for a in 0..4 {
                for b in 0..4 {
                    if y[a] && !y[b] {
                        pn += 1.0;
                        c += if p[a] > p[b] { 1.0 } else if p[a] == p[b] { 0.5 } else { 0.0 };
                    }
                }
            }
            num += prob * c;
            den += prob * pn;
        }
        let mut q = p.to_vec();
        assert!((expected_auc_of(&mut q) - num / den).abs() < 1e-15);
    }

    #[test]
    fn exports_parse_as_catalog() {
        let w = PlantedWorld::generate(&small(7)).unwrap();
        let catalog = Catalog::from_records(w.catalog_records()).unwrap();
        assert_eq!(catalog.items.len(), 200);
        let with_pattern = catalog.items.iter().filter(|i| i.tags[3].is_some()).count();
        assert!((40..100).contains(&with_pattern));
        let f = w.features();
        assert_eq!(f.width(), 64);
        assert_eq!(f.get(&item_id(3)).unwrap().iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn lower_temperature_carries_more_signal() {
        // agreement of the sampled tag with the most likely tag
        let agree = |tau: f64| {
            let w = PlantedWorld::generate(&WorldConfig { tau_a: tau, ..small(8) }).unwrap();
            (0..200)
                .filter(|&i| {
                    let l = w.tag_maps[0].logits(w.item_latent(i), 1.0);
                    let best = (0..l.len()).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
                    w.tags[0][i] == Some(best)
                })
                .count()
        };
        assert!(agree(0.1) > agree(5.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for c in [
            WorldConfig { target_density: 0.5, ..small(0) },
            WorldConfig { target_density: 0.0, ..small(0) },
            WorldConfig { noise_level: 1.5, ..small(0) },
            WorldConfig { n_items: 0, ..small(0) },
            WorldConfig { tau_a: 0.0, ..small(0) },
        ] {
            assert!(PlantedWorld::generate(&c).is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn world_round_trips_bit_exactly(seed in any::<u64>()) {
            let w = PlantedWorld::generate(&WorldConfig { n_items: 40, n_customers: 20, ..small(seed) }).unwrap();
            let bytes = w.to_artifact().to_bytes();
            let back = PlantedWorld::from_artifact(&Artifact::from_bytes(&bytes, "world").unwrap()).unwrap();
            prop_assert_eq!(&back, &w);
            prop_assert_eq!(back.to_artifact().to_bytes(), bytes);
            prop_assert_eq!(PlantedWorld::generate(&w.config).unwrap(), w);
        }
    }
}
