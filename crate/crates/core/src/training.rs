//! Conditioned logistic factorization: joint training of the feature mapping and
//! the customer bank on the training quadrant, and per-customer logistic
//! regression against frozen fDNA for held-out customers.

use std::collections::HashMap;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::network::{EmbeddingModel, Gradients, Input, Mode};
use crate::purchases::QuadrantView;
use crate::rng;

/// Probabilities are clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` inside logarithms.
pub const PROB_EPSILON: f64 = 1e-12;

const STREAM_BANK_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_NEGATIVES: u64 = 4;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// σ(f·w + b), kept strictly inside (0, 1).
pub fn predict_probability(f: &[f64], w: &[f64], b: f64) -> Result<f64> {
    check_dim("style vector", f.len(), w.len())?;
    Ok(sigmoid(dot(f, w) + b).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// Per-pair binary cross entropy with clamping; returns (loss, clamped?).
fn pair_loss(p: f64, y: bool) -> (f64, bool) {
    let clamped = !(PROB_EPSILON..=1.0 - PROB_EPSILON).contains(&p);
    let q = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    (if y { -q.ln() } else { -(1.0 - q).ln() }, clamped)
}

/// [`pair_loss`] of `σ(z)`, evaluated on the logit so probabilities near 0 or 1
/// keep full precision.
fn logit_pair_loss(z: f64, y: bool) -> (f64, bool) {
    let bound = logit(1.0 - PROB_EPSILON);
    let clamped = !(-bound..=bound).contains(&z);
    let z = z.clamp(-bound, bound);
    (if y { softplus(-z) } else { softplus(z) }, clamped)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub mean: f64,
    /// Probabilities that had to be clamped away from 0 or 1.
    pub clamped: usize,
}

/// Mean binary cross entropy.
pub fn cross_entropy(p: &[f64], labels: &[bool]) -> Result<CrossEntropy> {
    check_dim("labels", p.len(), labels.len())?;
    if p.is_empty() {
        return Err(Error::invalid("cross entropy of an empty set"));
    }
    let mut sum = 0.0;
    let mut clamped = 0;
    for (&pi, &yi) in p.iter().zip(labels) {
        if !(0.0..=1.0).contains(&pi) {
            return Err(Error::invalid(format!("probability {pi} outside [0, 1]")));
        }
        let (l, c) = pair_loss(pi, yi);
        sum += l;
        clamped += c as usize;
    }
    Ok(CrossEntropy {
        mean: sum / p.len() as f64,
        clamped,
    })
}

/// Style vectors `w_j` and biases `b_j` for a set of customers.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomerBank {
    customers: Vec<usize>,
    dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    row_of: HashMap<usize, usize>,
}

impl CustomerBank {
    pub fn zeros(customers: Vec<usize>, dim: usize) -> Self {
        let k = customers.len();
        Self::from_parts(customers, dim, vec![0.0; k * dim], vec![0.0; k]).expect("consistent shapes")
    }

    pub fn from_parts(customers: Vec<usize>, dim: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        check_dim("bank weights", customers.len() * dim, weights.len())?;
        check_dim("bank biases", customers.len(), biases.len())?;
        let row_of: HashMap<usize, usize> = customers.iter().enumerate().map(|(r, &c)| (c, r)).collect();
        if row_of.len() != customers.len() {
            return Err(Error::invalid("customer listed twice in bank"));
        }
        Ok(CustomerBank {
            customers,
            dim,
            weights,
            biases,
            row_of,
        })
    }

    pub fn len(&self) -> usize {
        self.customers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.customers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn customers(&self) -> &[usize] {
        &self.customers
    }

    pub fn row_of(&self, customer: usize) -> Option<usize> {
        self.row_of.get(&customer).copied()
    }

    pub fn weights(&self, row: usize) -> &[f64] {
        &self.weights[row * self.dim..(row + 1) * self.dim]
    }

    pub fn bias(&self, row: usize) -> f64 {
        self.biases[row]
    }

    pub fn all_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn all_biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn logit(&self, row: usize, f: &[f64]) -> f64 {
        dot(self.weights(row), f) + self.biases[row]
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.biases)
    }
}

/// Gaussian style vectors and biases set to each customer's purchase rate over
/// the quadrant's items: `b_j = logit(clamp(n_j / N, ε, 1 - ε))`, `ε = 1 / (2N)`.
pub fn init_customer_bank(view: &QuadrantView<'_>, dim: usize, seed: u64, sigma: f64) -> CustomerBank {
    let n = view.items().len().max(1) as f64;
    let eps = 1.0 / (2.0 * n);
    let counts = view.customer_counts();
    let mut rng = rng::derived(seed, &[STREAM_BANK_INIT]);
    let customers = view.customers().to_vec();
    let weights: Vec<f64> = (0..customers.len() * dim)
        .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let biases = counts
        .iter()
        .map(|&c| logit((c as f64 / n).clamp(eps, 1.0 - eps)))
        .collect();
    CustomerBank::from_parts(customers, dim, weights, biases).expect("consistent shapes")
}

/// Dense fDNA for every item (row = global item index).
#[derive(Debug, Clone, PartialEq)]
pub struct FdnaTable {
    dim: usize,
    data: Vec<f64>,
}

impl FdnaTable {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_dim("fDNA row", dim, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(FdnaTable { dim, data })
    }

    /// Infers fDNA for every input in parallel.
    pub fn compute(model: &EmbeddingModel, inputs: &[Input]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = inputs.par_iter().map(|x| model.infer(x)).collect::<Result<_>>()?;
        if rows.is_empty() {
            return Ok(FdnaTable {
                dim: model.output_width(),
                data: Vec::new(),
            });
        }
        Self::from_rows(&rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Step size for the customer bank; `None` means `learning_rate` times the
    /// number of training customers, so each customer moves by the mean
    /// gradient over the batch items.
    pub bank_learning_rate: Option<f64>,
    pub momentum: f64,
    pub epochs: usize,
    pub item_batch_size: usize,
    /// Non-buyers sampled per item per epoch; `None` uses every customer.
    pub negative_subsample: Option<usize>,
    pub seed: u64,
    pub weight_init_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            bank_learning_rate: None,
            momentum: 0.9,
            epochs: 20,
            item_batch_size: 64,
            negative_subsample: None,
            seed: 0,
            weight_init_sigma: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.learning_rate, "learning_rate")?;
        if let Some(b) = self.bank_learning_rate {
            pos(b, "bank_learning_rate")?;
        }
        pos(self.weight_init_sigma, "weight_init_sigma")?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.item_batch_size == 0 {
            return Err(Error::invalid("item_batch_size must be positive"));
        }
        if self.negative_subsample == Some(0) {
            return Err(Error::invalid("negative_subsample must be positive when set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Entry 0 is the exact loss before training; entry `e` is the mean
    /// stochastic loss seen during epoch `e`.
    pub loss_history: Vec<f64>,
    /// Exact loss of the final parameters (inference mode).
    pub final_loss: f64,
    pub clamp_count: usize,
}

/// Exact mean cross entropy over every (item, customer) pair of the quadrant.
pub fn exact_loss(
    model: &EmbeddingModel,
    inputs: &[Input],
    view: &QuadrantView<'_>,
    bank: &CustomerBank,
) -> Result<CrossEntropy> {
    let fdna: Vec<Vec<f64>> = view
        .items()
        .par_iter()
        .map(|&i| model.infer(&inputs[i]))
        .collect::<Result<_>>()?;
    loss_over_quadrant(&fdna, view, bank)
}

/// Exact loss for precomputed fDNA rows aligned with `view.items()`.
pub fn loss_over_quadrant(fdna: &[Vec<f64>], view: &QuadrantView<'_>, bank: &CustomerBank) -> Result<CrossEntropy> {
    let customers = view.customers();
    let rows: Vec<usize> = customers
        .iter()
        .map(|&j| bank.row_of(j).ok_or_else(|| Error::invalid(format!("customer {j} missing from bank"))))
        .collect::<Result<_>>()?;
    let per_item: Vec<(f64, usize)> = view
        .items()
        .par_iter()
        .zip(fdna)
        .map(|(&i, f)| {
            let mut sum = 0.0;
            let mut clamped = 0;
            for (&j, &r) in customers.iter().zip(&rows) {
                let (l, c) = logit_pair_loss(bank.logit(r, f), view.matrix.contains(i, j));
                sum += l;
                clamped += c as usize;
            }
            (sum, clamped)
        })
        .collect();
    let n = (view.items().len() * customers.len()) as f64;
    Ok(CrossEntropy {
        mean: per_item.iter().map(|x| x.0).sum::<f64>() / n,
        clamped: per_item.iter().map(|x| x.1).sum(),
    })
}

struct ItemPass {
    f: Vec<f64>,
    cache: crate::network::ForwardCache,
    /// (bank row, dLoss/dlogit) for the customers this item touched.
    dz: Vec<(usize, f64)>,
    grad_f: Vec<f64>,
    loss: f64,
    clamped: usize,
}

/// Trains `model` and a fresh customer bank on `view` (the training quadrant)
/// with mini-batch SGD with momentum. Batches are sets of items; each item
/// contributes its full customer row, or its buyers plus a reweighted sample of
/// non-buyers when `negative_subsample` is set.
///
/// `inputs` is indexed by global item index.
pub fn train(
    model: &mut EmbeddingModel,
    inputs: &[Input],
    view: &QuadrantView<'_>,
    config: &TrainConfig,
) -> Result<(CustomerBank, TrainReport)> {
    config.validate()?;
    let mut bank = init_customer_bank(view, model.output_width(), config.seed, config.weight_init_sigma);
    let report = train_with_bank(model, &mut bank, inputs, view, config)?;
    Ok((bank, report))
}

/// As [`train`], continuing from an existing bank.
pub fn train_with_bank(
    model: &mut EmbeddingModel,
    bank: &mut CustomerBank,
    inputs: &[Input],
    view: &QuadrantView<'_>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    check_dim("bank dimension", model.output_width(), bank.dim())?;
    let customers = view.customers();
    let k = customers.len();
    if k == 0 || view.items().is_empty() {
        return Err(Error::invalid("training quadrant is empty"));
    }
    let bank_rows: Vec<usize> = customers
        .iter()
        .map(|&j| bank.row_of(j).ok_or_else(|| Error::invalid(format!("customer {j} missing from bank"))))
        .collect::<Result<_>>()?;
    let mut row_pos = vec![usize::MAX; view.matrix.n_customers()];
    for (pos, &j) in customers.iter().enumerate() {
        row_pos[j] = pos;
    }
    // buyers of each item as positions into `customers`
    let buyers: HashMap<usize, Vec<usize>> = view
        .items()
        .iter()
        .map(|&i| (i, view.row(i).map(|j| row_pos[j]).collect()))
        .collect();

    let initial = exact_loss(model, inputs, view, bank)?;
    let mut loss_history = vec![initial.mean];
    let mut clamp_count = initial.clamped;

    let bank_lr = config.bank_learning_rate.unwrap_or(config.learning_rate * k as f64);
    let dim = bank.dim();
    let mut grads = Gradients::zeros_like(model);
    let mut velocity = Gradients::zeros_like(model);
    let mut bank_vel_w = vec![0.0; bank.weights.len()];
    let mut bank_vel_b = vec![0.0; bank.biases.len()];
    let mut order = view.items().to_vec();

    for epoch in 0..config.epochs {
        order.copy_from_slice(view.items());
        order.shuffle(&mut rng::derived(config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0.0;

        for batch in order.chunks(config.item_batch_size) {
            let frozen: &EmbeddingModel = model;
            let bank_ref: &CustomerBank = bank;
            let passes: Vec<ItemPass> = batch
                .par_iter()
                .map(|&i| {
                    let seed = rng::derive_seed(config.seed, &[STREAM_DROPOUT, epoch as u64, i as u64]);
                    let (f, cache) = frozen.forward(&inputs[i], Mode::Train { seed })?;
                    let pos = &buyers[&i];
                    let mut active: Vec<(usize, bool, f64)> = match config.negative_subsample {
                        None => {
                            let mut y = vec![false; k];
                            for &p in pos {
                                y[p] = true;
                            }
                            y.into_iter().enumerate().map(|(p, yy)| (p, yy, 1.0)).collect()
                        }
                        Some(m) => {
                            let negatives = k - pos.len();
                            let mut act: Vec<(usize, bool, f64)> = pos.iter().map(|&p| (p, true, 1.0)).collect();
                            if negatives > 0 {
                                let take = m.min(negatives);
                                let weight = negatives as f64 / take as f64;
                                let mut r = rng::derived(config.seed, &[STREAM_NEGATIVES, epoch as u64, i as u64]);
                                // sample among non-buyer ranks, then map rank -> position
                                let mut picks: Vec<usize> = index::sample(&mut r, negatives, take).into_vec();
                                picks.sort_unstable();
                                let mut b = 0;
                                let mut rank_shift = 0;
                                for rank in picks {
                                    while b < pos.len() && pos[b] <= rank + rank_shift {
                                        b += 1;
                                        rank_shift += 1;
                                    }
                                    act.push((rank + rank_shift, false, weight));
                                }
                            }
                            act
                        }
                    };
                    active.sort_by_key(|a| a.0);
                    let mut grad_f = vec![0.0; dim];
                    let mut dz = Vec::with_capacity(active.len());
                    let mut loss = 0.0;
                    let mut clamped = 0;
                    for (p, y, wgt) in active {
                        let row = bank_rows[p];
                        let z = bank_ref.logit(row, &f);
                        let prob = sigmoid(z);
                        let (l, c) = logit_pair_loss(z, y);
                        loss += wgt * l;
                        clamped += c as usize;
                        let g = wgt * (prob - if y { 1.0 } else { 0.0 });
                        for (gf, w) in grad_f.iter_mut().zip(bank_ref.weights(row)) {
                            *gf += g * w;
                        }
                        dz.push((row, g));
                    }
                    Ok(ItemPass {
                        f,
                        cache,
                        dz,
                        grad_f,
                        loss,
                        clamped,
                    })
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / (batch.len() * k) as f64;
            let batch_loss: f64 = passes.iter().map(|p| p.loss).sum();
            let finite_params = model.layers().iter().all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
                && bank.weights.iter().chain(&bank.biases).all(|x| x.is_finite());
            if !batch_loss.is_finite() || !finite_params {
                return Err(Error::Numerical(format!(
                    "training diverged in epoch {} with learning rate {}: batch loss is {batch_loss}",
                    epoch + 1,
                    config.learning_rate
                )));
            }
            epoch_loss += batch_loss;
            epoch_pairs += (batch.len() * k) as f64;
            clamp_count += passes.iter().map(|p| p.clamped).sum::<usize>();

            grads.fill_zero();
            for pass in &passes {
                let g: Vec<f64> = pass.grad_f.iter().map(|x| x * scale).collect();
                model.backward_into(&pass.cache, &g, &mut grads, false)?;
            }
            let mut gw = vec![0.0; bank.weights.len()];
            let mut gb = vec![0.0; bank.biases.len()];
            for pass in &passes {
                for &(row, g) in &pass.dz {
                    let g = g * scale;
                    gb[row] += g;
                    for (a, fv) in gw[row * dim..(row + 1) * dim].iter_mut().zip(&pass.f) {
                        *a += g * fv;
                    }
                }
            }

            sgd_step(model, &mut velocity, &grads, config.learning_rate, config.momentum);
            for ((p, v), g) in bank.weights.iter_mut().zip(&mut bank_vel_w).zip(&gw) {
                *v = config.momentum * *v - bank_lr * g;
                *p += *v;
            }
            for ((p, v), g) in bank.biases.iter_mut().zip(&mut bank_vel_b).zip(&gb) {
                *v = config.momentum * *v - bank_lr * g;
                *p += *v;
            }
        }
        let mean = epoch_loss / epoch_pairs;
        if !mean.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged in epoch {} with learning rate {}",
                epoch + 1,
                config.learning_rate
            )));
        }
        loss_history.push(mean);
    }

    let final_loss = if config.epochs == 0 {
        initial.mean
    } else {
        let fin = exact_loss(model, inputs, view, bank)?;
        if !fin.mean.is_finite() {
            return Err(Error::Numerical(format!(
                "final loss is not finite (learning rate {})",
                config.learning_rate
            )));
        }
        fin.mean
    };
    Ok(TrainReport {
        loss_history,
        final_loss,
        clamp_count,
    })
}

fn sgd_step(model: &mut EmbeddingModel, velocity: &mut Gradients, grads: &Gradients, lr: f64, momentum: f64) {
    for (l, layer) in model.layers_mut().iter_mut().enumerate() {
        for ((p, v), g) in layer.weights.iter_mut().zip(&mut velocity.weights[l]).zip(&grads.weights[l]) {
            *v = momentum * *v - lr * g;
            *p += *v;
        }
        for ((p, v), g) in layer.bias.iter_mut().zip(&mut velocity.biases[l]).zip(&grads.biases[l]) {
            *v = momentum * *v - lr * g;
            *p += *v;
        }
    }
}

/// Gradient of the exact mean loss with respect to every network parameter, every
/// bank parameter and every item's fDNA, in inference mode.
#[derive(Debug, Clone)]
pub struct FullGradient {
    pub network: Gradients,
    pub bank_weights: Vec<f64>,
    pub bank_biases: Vec<f64>,
    /// dLoss/df_i, aligned with `view.items()`.
    pub fdna: Vec<Vec<f64>>,
}

pub fn full_gradient(
    model: &EmbeddingModel,
    bank: &CustomerBank,
    inputs: &[Input],
    view: &QuadrantView<'_>,
) -> Result<FullGradient> {
    let customers = view.customers();
    let scale = 1.0 / (view.items().len() * customers.len()) as f64;
    let dim = bank.dim();
    let mut network = Gradients::zeros_like(model);
    let mut bank_weights = vec![0.0; bank.all_weights().len()];
    let mut bank_biases = vec![0.0; bank.len()];
    let mut fdna_grads = Vec::with_capacity(view.items().len());
    for &i in view.items() {
        let (f, cache) = model.forward(&inputs[i], Mode::Infer)?;
        let mut gf = vec![0.0; dim];
        for &j in customers {
            let row = bank.row_of(j).ok_or_else(|| Error::invalid("customer missing from bank"))?;
            let p = sigmoid(bank.logit(row, &f));
            let g = (p - if view.matrix.contains(i, j) { 1.0 } else { 0.0 }) * scale;
            bank_biases[row] += g;
            for d in 0..dim {
                bank_weights[row * dim + d] += g * f[d];
                gf[d] += g * bank.weights(row)[d];
            }
        }
        model.backward_into(&cache, &gf, &mut network, false)?;
        fdna_grads.push(gf);
    }
    Ok(FullGradient {
        network,
        bank_weights,
        bank_biases,
        fdna: fdna_grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// L2 penalty on style vectors (biases are not penalized).
    pub l2: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the objective gradient.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            l2: 1e-4,
            max_iterations: 100,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Per customer, aligned with the bank rows.
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

/// Fits `(w_j, b_j)` for every customer of `view` by L2-regularized logistic
/// regression from the frozen fDNA of the view's items to the purchase labels.
/// Uses damped Newton steps; customers are independent and fitted in parallel.
pub fn fit_customers(fdna: &FdnaTable, view: &QuadrantView<'_>, config: &FitConfig) -> Result<(CustomerBank, FitReport)> {
    if config.l2 < 0.0 || config.tolerance <= 0.0 {
        return Err(Error::invalid("fit config needs l2 >= 0 and tolerance > 0"));
    }
    let items = view.items();
    if items.is_empty() {
        return Err(Error::invalid("no items to fit against"));
    }
    let dim = fdna.dim();
    let x: Vec<&[f64]> = items.iter().map(|&i| fdna.row(i)).collect();
    let mut labels: HashMap<usize, Vec<bool>> = view.customers().iter().map(|&j| (j, vec![false; items.len()])).collect();
    for (pos, &i) in items.iter().enumerate() {
        for j in view.row(i) {
            labels.get_mut(&j).expect("quadrant customer")[pos] = true;
        }
    }
    let fits: Vec<(Vec<f64>, f64, bool, usize)> = view
        .customers()
        .par_iter()
        .map(|j| fit_one(&x, &labels[j], dim, config))
        .collect();
    let mut weights = Vec::with_capacity(fits.len() * dim);
    let mut biases = Vec::with_capacity(fits.len());
    let mut converged = Vec::with_capacity(fits.len());
    let mut iterations = Vec::with_capacity(fits.len());
    for (w, b, c, it) in fits {
        weights.extend(w);
        biases.push(b);
        converged.push(c);
        iterations.push(it);
    }
    let bank = CustomerBank::from_parts(view.customers().to_vec(), dim, weights, biases)?;
    Ok((bank, FitReport { converged, iterations }))
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn objective(x: &[&[f64]], y: &[bool], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z = dot(xi, w) + b;
            softplus(z) - if yi { z } else { 0.0 }
        })
        .sum();
    data / n + 0.5 * l2 * dot(w, w)
}

fn fit_one(x: &[&[f64]], y: &[bool], dim: usize, config: &FitConfig) -> (Vec<f64>, f64, bool, usize) {
    let n = x.len();
    let positives = y.iter().filter(|&&v| v).count();
    let eps = 1.0 / (2.0 * n as f64);
    if positives == 0 {
        return (vec![0.0; dim], logit(eps), true, 0);
    }
    if positives == n {
        return (vec![0.0; dim], logit(1.0 - eps), true, 0);
    }
    let m = dim + 1;
    let mut w = vec![0.0; dim];
    let mut b = logit(positives as f64 / n as f64);
    let mut current = objective(x, y, &w, b, config.l2);
    let inv_n = 1.0 / n as f64;

    for iter in 0..config.max_iterations {
        let mut grad = vec![0.0; m];
        let mut hess = vec![0.0; m * m];
        for (xi, &yi) in x.iter().zip(y) {
            let p = sigmoid(dot(xi, &w) + b);
            let r = p - if yi { 1.0 } else { 0.0 };
            let s = p * (1.0 - p);
            for a in 0..dim {
                grad[a] += r * xi[a];
                let sa = s * xi[a];
                for c in 0..=a {
                    hess[a * m + c] += sa * xi[c];
                }
                hess[dim * m + a] += sa;
            }
            grad[dim] += r;
            hess[dim * m + dim] += s;
        }
        for a in 0..m {
            grad[a] *= inv_n;
            for c in 0..=a {
                hess[a * m + c] *= inv_n;
            }
        }
        for a in 0..dim {
            grad[a] += config.l2 * w[a];
            hess[a * m + a] += config.l2;
        }
        if grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs())) < config.tolerance {
            return (w, b, true, iter);
        }
        for a in 0..m {
            for c in 0..a {
                hess[c * m + a] = hess[a * m + c];
            }
        }
        let step = solve_spd(&hess, &grad, m);
        let mut t = 1.0;
        let slope = -dot(&grad, &step);
        let mut accepted = false;
        for _ in 0..40 {
            let w_new: Vec<f64> = w.iter().zip(&step).map(|(wi, si)| wi - t * si).collect();
            let b_new = b - t * step[dim];
            let value = objective(x, y, &w_new, b_new, config.l2);
            if value <= current + 1e-4 * t * slope {
                w = w_new;
                b = b_new;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no further decrease representable; stationary to machine precision
            return (w, b, true, iter + 1);
        }
    }
    (w, b, false, config.max_iterations)
}

/// Solves `A x = g` for symmetric positive semi-definite `A` by Cholesky,
/// adding diagonal jitter until the factorization succeeds.
fn solve_spd(a: &[f64], g: &[f64], m: usize) -> Vec<f64> {
    let scale = (0..m).map(|i| a[i * m + i].abs()).fold(0.0f64, f64::max).max(1e-300);
    let mut jitter = 0.0;
    loop {
        if let Some(l) = cholesky(a, m, jitter) {
            let mut z = g.to_vec();
            for i in 0..m {
                let mut s = z[i];
                for k in 0..i {
                    s -= l[i * m + k] * z[k];
                }
                z[i] = s / l[i * m + i];
            }
            for i in (0..m).rev() {
                let mut s = z[i];
                for k in i + 1..m {
                    s -= l[k * m + i] * z[k];
                }
                z[i] = s / l[i * m + i];
            }
            return z;
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
    }
}

fn cholesky(a: &[f64], m: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[i * m + j];
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    Some(l)
}
