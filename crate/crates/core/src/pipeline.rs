//! End-to-end steps shared by the command line and the test suites.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::catalog::{self, AttributeVocabulary, Catalog, Item};
use crate::error::{Error, Result};
use crate::evaluation::{self, Scorer};
use crate::network::{
    init_model, taper_widths, tower_specs, CombinedModel, EmbeddingModel, FeatureChannel, InitScale, Input, SecondChannel,
};
use crate::purchases::{self, PurchaseMatrix, Quadrant, QuadrantSplit, SplitManifest};
use crate::rng;
use crate::sparse::SparseVector;
use crate::training::{self, CustomerBank, FdnaTable, FitConfig, FitReport, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogConfig {
    pub min_class_support: usize,
    pub price_clusters: usize,
    pub fabric_clusters: usize,
    pub seed: u64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            min_class_support: catalog::DEFAULT_MIN_CLASS_SUPPORT,
            price_clusters: catalog::DEFAULT_PRICE_CLUSTERS,
            fabric_clusters: catalog::DEFAULT_FABRIC_CLUSTERS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedCatalog {
    /// Items with price and fabric cluster labels filled in.
    pub items: Vec<Item>,
    pub vocabulary: AttributeVocabulary,
    /// One-hot attribute input per item, in catalog order.
    pub inputs: Vec<Input>,
    pub price_excluded: Vec<String>,
    /// Cluster counts actually used (capped at the number of distinct values).
    pub price_clusters: usize,
    pub fabric_clusters: usize,
}

fn distinct_points<'a>(points: impl Iterator<Item = &'a [f64]>) -> usize {
    points
        .map(|p| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Derives price and fabric cluster tags, builds the vocabulary and encodes every item.
pub fn prepare_catalog(catalog: &Catalog, config: &CatalogConfig) -> Result<PreparedCatalog> {
    let mut items = catalog.items.clone();
    let ln_prices: Vec<[f64; 1]> = items
        .iter()
        .filter_map(|i| i.raw_price.filter(|p| *p > 0.0 && p.is_finite()).map(|p| [p.ln()]))
        .collect();
    let mut price_excluded = Vec::new();
    let mut price_clusters = 0;
    if !ln_prices.is_empty() {
        price_clusters = config.price_clusters.min(distinct_points(ln_prices.iter().map(|p| &p[..])));
        let c = catalog::cluster_prices(&items, price_clusters, rng::derive_seed(config.seed, &[1]))?;
        c.apply(&mut items, catalog::PRICE_CLUSTER, "price");
        price_excluded = c.excluded;
    }
    let fabrics: Vec<&[f64]> = items.iter().filter_map(|i| i.fiber_composition.as_deref()).collect();
    let mut fabric_clusters = 0;
    if !fabrics.is_empty() {
        fabric_clusters = config.fabric_clusters.min(distinct_points(fabrics.into_iter()));
        let c = catalog::cluster_fabrics(&items, fabric_clusters, rng::derive_seed(config.seed, &[2]))?;
        c.apply(&mut items, catalog::FABRIC_CLUSTER, "fabric");
    }
    let vocabulary = catalog::build_vocabulary(&items, config.min_class_support)?;
    let inputs = encode_all(&vocabulary, &items);
    Ok(PreparedCatalog {
        items,
        vocabulary,
        inputs,
        price_excluded,
        price_clusters,
        fabric_clusters,
    })
}

pub fn encode_all(vocabulary: &AttributeVocabulary, items: &[Item]) -> Vec<Input> {
    items.iter().map(|i| Input::Sparse(vocabulary.encode_item(i))).collect()
}

/// Dense precomputed-feature inputs in catalog order; every item must be present.
pub fn feature_inputs(features: &FeatureChannel, item_ids: &[String]) -> Result<Vec<Input>> {
    item_ids
        .iter()
        .map(|id| {
            features
                .get(id)
                .map(|v| Input::Dense(v.to_vec()))
                .ok_or_else(|| Error::data(format!("no precomputed features for item {id:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub item_validation_fraction: f64,
    pub customer_validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            item_validation_fraction: 0.1,
            customer_validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SplitConfig {
    /// (item seed, customer seed) derived from `seed`.
    pub fn seeds(&self) -> (u64, u64) {
        (rng::derive_seed(self.seed, &[1]), rng::derive_seed(self.seed, &[2]))
    }

    pub fn manifest(&self, split: &QuadrantSplit, matrix: &PurchaseMatrix) -> SplitManifest {
        let (is, cs) = self.seeds();
        SplitManifest::from_split(
            split,
            matrix,
            is,
            cs,
            self.item_validation_fraction,
            self.customer_validation_fraction,
        )
    }
}

pub fn make_split(matrix: &PurchaseMatrix, config: &SplitConfig) -> Result<QuadrantSplit> {
    let (is, cs) = config.seeds();
    let (it, iv) = catalog::split_items(matrix.n_items(), config.item_validation_fraction, is)?;
    let (ct, cv) = purchases::split_customers(matrix, config.customer_validation_fraction, cs)?;
    QuadrantSplit::new(matrix.n_items(), matrix.n_customers(), it, iv, ct, cv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// fDNA dimension d.
    pub dim: usize,
    /// Hidden widths; empty means a geometric taper over `layers` layers.
    pub hidden: Vec<usize>,
    pub layers: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 256,
            hidden: Vec::new(),
            layers: 4,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn hidden_widths(&self, input_width: usize) -> Vec<usize> {
        if self.hidden.is_empty() {
            taper_widths(input_width, self.dim, self.layers.max(1))
        } else {
            self.hidden.clone()
        }
    }

    pub fn build(&self, input_width: usize) -> Result<EmbeddingModel> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let specs = tower_specs(input_width, &self.hidden_widths(input_width), self.dim, self.dropout);
        init_model(&specs, self.seed, InitScale::He)
    }
}

/// Trained mapping plus both customer banks.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: EmbeddingModel,
    pub train_bank: CustomerBank,
    pub val_bank: CustomerBank,
    /// fDNA of every item in catalog order.
    pub fdna: FdnaTable,
    pub train_report: TrainReport,
    pub fit_report: FitReport,
}

impl TrainedRun {
    /// Bank covering the customer side of `quadrant`.
    pub fn bank_for(&self, quadrant: Quadrant) -> &CustomerBank {
        if quadrant.training_customers() {
            &self.train_bank
        } else {
            &self.val_bank
        }
    }

    pub fn scorer(&self, quadrant: Quadrant) -> Result<Scorer<'_>> {
        Scorer::new(&self.fdna, self.bank_for(quadrant))
    }

    pub fn quadrant_auc(
        &self,
        matrix: &PurchaseMatrix,
        split: &QuadrantSplit,
        quadrant: Quadrant,
        pair_sample: Option<usize>,
        seed: u64,
    ) -> Result<f64> {
        evaluation::quadrant_auc(&self.scorer(quadrant)?, &split.view(matrix, quadrant), pair_sample, seed)
    }
}

/// Trains on Π^tt, computes fDNA for every item and fits the validation
/// customers against the frozen training-item fDNA (Π^tv).
pub fn train_run(
    mut model: EmbeddingModel,
    inputs: &[Input],
    matrix: &PurchaseMatrix,
    split: &QuadrantSplit,
    train: &TrainConfig,
    fit: &FitConfig,
) -> Result<TrainedRun> {
    crate::error::check_dim("item inputs", matrix.n_items(), inputs.len())?;
    let (train_bank, train_report) = training::train(&mut model, inputs, &split.view(matrix, Quadrant::TT), train)?;
    finish_run(model, train_bank, train_report, inputs, matrix, split, fit)
}

pub fn finish_run(
    model: EmbeddingModel,
    train_bank: CustomerBank,
    train_report: TrainReport,
    inputs: &[Input],
    matrix: &PurchaseMatrix,
    split: &QuadrantSplit,
    fit: &FitConfig,
) -> Result<TrainedRun> {
    let fdna = FdnaTable::compute(&model, inputs)?;
    let (val_bank, fit_report) = training::fit_customers(&fdna, &split.view(matrix, Quadrant::TV), fit)?;
    Ok(TrainedRun {
        model,
        train_bank,
        val_bank,
        fdna,
        train_report,
        fit_report,
    })
}

/// Merge-layer inputs: the concatenated frozen channel outputs per item.
pub fn merge_inputs(a: &FdnaTable, b: &[Vec<f64>]) -> Result<Vec<Input>> {
    crate::error::check_dim("channel outputs", a.len(), b.len())?;
    Ok(b.iter()
        .enumerate()
        .map(|(i, bi)| {
            let mut v = a.row(i).to_vec();
            v.extend_from_slice(bi);
            Input::Dense(v)
        })
        .collect())
}

/// Sparse inputs as dense rows (for feature channels built from one-hot data).
pub fn dense_rows(inputs: &[Input]) -> Vec<Vec<f64>> {
    inputs
        .iter()
        .map(|x| match x {
            Input::Dense(v) => v.clone(),
            Input::Sparse(s) => SparseVector::to_dense(s),
        })
        .collect()
}

/// Probabilities and observed labels for `n` pairs drawn uniformly (with
/// replacement) from the whole matrix, each scored with the bank of its customer side.
pub fn sample_scored_pairs(
    run: &TrainedRun,
    matrix: &PurchaseMatrix,
    split: &QuadrantSplit,
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    use rand::Rng;
    let mut r = rng::rng(seed);
    let mut p = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let i = r.random_range(0..matrix.n_items());
        let j = r.random_range(0..matrix.n_customers());
        let bank = if split.is_train_customer(j) { &run.train_bank } else { &run.val_bank };
        let row = bank
            .row_of(j)
            .ok_or_else(|| Error::invalid(format!("customer {j} has no bank entry")))?;
        p.push(training::sigmoid(bank.logit(row, run.fdna.row(i))));
        y.push(matrix.contains(i, j));
    }
    Ok((p, y))
}

/// Which item representation a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Attribute,
    Precomputed,
    Combined,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Attribute => "attribute",
            Channel::Precomputed => "precomputed",
            Channel::Combined => "combined",
        })
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribute" => Ok(Channel::Attribute),
            "precomputed" => Ok(Channel::Precomputed),
            "combined" => Ok(Channel::Combined),
            _ => Err(Error::invalid(format!(
                "unknown channel `{s}` (expected attribute, precomputed or combined)"
            ))),
        }
    }
}

/// A trained item mapping of any channel.
#[derive(Debug, Clone, PartialEq)]
pub enum ItemModel {
    Attribute(EmbeddingModel),
    Precomputed(EmbeddingModel),
    Combined(CombinedModel),
}

const MODEL_KIND: &str = "model";
const BANK_KIND: &str = "bank";

impl ItemModel {
    pub fn channel(&self) -> Channel {
        match self {
            ItemModel::Attribute(_) => Channel::Attribute,
            ItemModel::Precomputed(_) => Channel::Precomputed,
            ItemModel::Combined(_) => Channel::Combined,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            ItemModel::Attribute(m) | ItemModel::Precomputed(m) => m.output_width(),
            ItemModel::Combined(c) => c.merge.output_width(),
        }
    }

    /// fDNA for every item. `attributes` and `features` are in catalog order and
    /// are required by the channels that read them.
    pub fn fdna(&self, attributes: Option<&[Input]>, features: Option<&[Input]>) -> Result<FdnaTable> {
        match self {
            ItemModel::Attribute(m) => FdnaTable::compute(m, need(attributes, "attribute")?),
            ItemModel::Precomputed(m) => FdnaTable::compute(m, need(features, "precomputed feature")?),
            ItemModel::Combined(c) => {
                let merged = combined_merge_inputs(c, need(attributes, "attribute")?, need(features, "precomputed feature")?)?;
                FdnaTable::compute(&c.merge, &merged)
            }
        }
    }

    pub fn to_artifact(&self, seed: u64) -> Artifact {
        let mut art = Artifact::new(MODEL_KIND);
        art.push_meta("channel", self.channel());
        art.push_meta("seed", seed);
        match self {
            ItemModel::Attribute(m) | ItemModel::Precomputed(m) => m.write_into(&mut art, ""),
            ItemModel::Combined(c) => {
                c.channel_a.write_into(&mut art, "a.");
                match &c.channel_b {
                    SecondChannel::Model(m) => {
                        art.push_meta("second", "model");
                        m.write_into(&mut art, "b.");
                    }
                    SecondChannel::Features => art.push_meta("second", "features"),
                }
                c.merge.write_into(&mut art, "merge.");
            }
        }
        art
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        match art.parse_meta::<Channel>("channel")? {
            Channel::Attribute => Ok(ItemModel::Attribute(EmbeddingModel::read_from(art, "")?)),
            Channel::Precomputed => Ok(ItemModel::Precomputed(EmbeddingModel::read_from(art, "")?)),
            Channel::Combined => {
                let a = EmbeddingModel::read_from(art, "a.")?;
                let b = match art.meta("second")? {
                    "model" => SecondChannel::Model(EmbeddingModel::read_from(art, "b.")?),
                    "features" => SecondChannel::Features,
                    other => return Err(Error::format("model", format!("unknown second channel `{other}`"))),
                };
                let merge = EmbeddingModel::read_from(art, "merge.")?;
                Ok(ItemModel::Combined(CombinedModel::from_parts(a, b, merge)?))
            }
        }
    }

    pub fn write(&self, path: &Path, seed: u64) -> Result<()> {
        self.to_artifact(seed).write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_artifact(&Artifact::read(path, MODEL_KIND)?)
    }
}

fn need<'a>(x: Option<&'a [Input]>, what: &str) -> Result<&'a [Input]> {
    x.ok_or_else(|| Error::invalid(format!("{what} inputs required")))
}

/// Merge-layer inputs of a combined model for every item.
pub fn combined_merge_inputs(model: &CombinedModel, attributes: &[Input], features: &[Input]) -> Result<Vec<Input>> {
    crate::error::check_dim("precomputed features", attributes.len(), features.len())?;
    use rayon::prelude::*;
    attributes
        .par_iter()
        .zip(features.par_iter())
        .map(|(a, f)| {
            let f = match f {
                Input::Dense(v) => v.as_slice(),
                Input::Sparse(_) => return Err(Error::invalid("precomputed features must be dense")),
            };
            Ok(Input::Dense(model.channel_outputs(a, Some(f))?))
        })
        .collect()
}

/// Customer bank with the customer ids it covers.
pub fn bank_to_artifact(bank: &CustomerBank, customer_ids: &[String]) -> Artifact {
    let mut art = Artifact::new(BANK_KIND);
    art.push_meta("dim", bank.dim());
    art.push_meta("customers", bank.len());
    for &j in bank.customers() {
        art.push_meta("customer", &customer_ids[j]);
    }
    art.push_blob("weights", bank.all_weights().to_vec());
    art.push_blob("biases", bank.all_biases().to_vec());
    art
}

/// Resolves the stored customer ids against `matrix`.
pub fn bank_from_artifact(art: &Artifact, matrix: &PurchaseMatrix) -> Result<CustomerBank> {
    let index = matrix.customer_index();
    let customers = art
        .meta_all("customer")
        .map(|id| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::data(format!("bank names unknown customer `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let declared: usize = art.parse_meta("customers")?;
    crate::error::check_dim("bank customers", declared, customers.len())?;
    CustomerBank::from_parts(
        customers,
        art.parse_meta("dim")?,
        art.blob("weights")?.to_vec(),
        art.blob("biases")?.to_vec(),
    )
}

pub fn write_bank(path: &Path, bank: &CustomerBank, customer_ids: &[String]) -> Result<()> {
    bank_to_artifact(bank, customer_ids).write(path)
}

pub fn read_bank(path: &Path, matrix: &PurchaseMatrix) -> Result<CustomerBank> {
    bank_from_artifact(&Artifact::read(path, BANK_KIND)?, matrix)
}

/// Loads a purchases file against a fixed item order; customers are the sorted
/// distinct ids of the file.
pub fn read_purchases(path: &Path, item_ids: &[String]) -> Result<(PurchaseMatrix, purchases::LoadReport)> {
    let open = || {
        std::fs::File::open(path)
            .map(std::io::BufReader::new)
            .map_err(|e| Error::io(path, e))
    };
    let customers = purchases::customer_order(open()?)?;
    purchases::load_purchases(open()?, item_ids, &customers)
}

/// Text run manifest: resolved configuration, loss per epoch, clamp counts and
/// the cold-start fit summary. Wall time is kept out so reruns are byte-identical.
pub fn run_manifest(config_toml: &str, run: &TrainedRun, resumed_epochs: usize) -> String {
    let mut out = String::from("# fdna run manifest v1\n");
    out.push_str(&format!("channel_output_width {}\n", run.fdna.dim()));
    out.push_str(&format!("resumed_after_epochs {resumed_epochs}\n"));
    for (e, l) in run.train_report.loss_history.iter().enumerate() {
        out.push_str(&format!("loss {e} {l:?}\n"));
    }
    out.push_str(&format!("final_loss {:?}\n", run.train_report.final_loss));
    out.push_str(&format!("clamp_count {}\n", run.train_report.clamp_count));
    out.push_str(&format!("fit_converged {}\n", run.fit_report.converged.iter().filter(|&&c| c).count()));
    out.push_str(&format!("fit_customers {}\n", run.fit_report.converged.len()));
    out.push_str(&format!("fit_iterations {}\n", run.fit_report.iterations.iter().max().copied().unwrap_or(0)));
    out.push_str(&format!("fdna_sparsity {:?}\n", EmbeddingModel::sparsity(&run.fdna.rows())));
    out.push_str("[config]\n");
    out.push_str(config_toml);
    out
}
