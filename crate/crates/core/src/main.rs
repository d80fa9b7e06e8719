use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fdna::artifact::write_atomic;
use fdna::catalog::{self, AttributeVocabulary, Catalog};
use fdna::evaluation::{self, Scorer};
use fdna::network::{CombinedModel, FeatureChannel, InitScale, Input, SecondChannel};
use fdna::pipeline::{self, CatalogConfig, Channel, ItemModel, ModelConfig, SplitConfig};
use fdna::purchases::{PurchaseMatrix, Quadrant, QuadrantSplit, SplitManifest};
use fdna::similarity::{self, EmbeddingStore};
use fdna::synthetic::{PlantedWorld, WorldConfig};
use fdna::training::{self, CustomerBank, FdnaTable, FitConfig, TrainConfig};
use fdna::tsne::{self, Metric, TsneConfig};
use fdna::{Error, Result};

const MODEL_FILE: &str = "model.bin";
const TRAIN_BANK_FILE: &str = "bank.train.bin";
const VAL_BANK_FILE: &str = "bank.val.bin";
const FDNA_FILE: &str = "fdna.emb";
const SPLIT_FILE: &str = "split.txt";
const VOCAB_FILE: &str = "vocab.txt";

#[derive(Parser)]
#[command(name = "fdna", version, about = "Item embeddings from attributes and purchase histories")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a planted world and export catalog, purchases and features.
    GenData(GenDataArgs),
    /// Train an item mapping on the training quadrant and fit validation customers.
    Train(TrainArgs),
    /// AUC per quadrant for one or more runs.
    Evaluate(EvaluateArgs),
    /// Equal-count calibration bins over sampled pairs.
    Calibrate(CalibrateArgs),
    /// Top items for one customer.
    Recommend(RecommendArgs),
    /// Nearest items by cosine distance.
    Neighbors(NeighborsArgs),
    /// 2-D t-SNE map of item embeddings.
    Map(MapArgs),
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    items: usize,
    #[arg(long, default_value_t = 200)]
    customers: usize,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    #[arg(long, default_value_t = 0.02)]
    density: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    tau_a: f64,
    #[arg(long, default_value_t = 0.5)]
    tau_b: f64,
    #[arg(long, default_value_t = 0.5)]
    bias_sd: f64,
    /// Class counts for brand, commodity group, color and pattern.
    #[arg(long, value_delimiter = ',', default_value = "40,20,12,8")]
    tag_sizes: Vec<usize>,
    /// Class counts of the precomputed feature families.
    #[arg(long, value_delimiter = ',', default_value = "16,16,16,16")]
    feature_sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML run configuration; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    purchases: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    channel: Option<ChannelArg>,
    /// Run directory of the frozen attribute channel (combined only).
    #[arg(long)]
    attribute_run: Option<PathBuf>,
    /// Run directory of the frozen precomputed channel (combined only); without it
    /// the raw features form the second channel.
    #[arg(long)]
    precomputed_run: Option<PathBuf>,
    /// Continue training from an earlier run directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    min_class_support: Option<usize>,
    #[arg(long)]
    price_clusters: Option<usize>,
    #[arg(long)]
    fabric_clusters: Option<usize>,
    #[arg(long)]
    item_val_fraction: Option<f64>,
    #[arg(long)]
    customer_val_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    bank_learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negative_subsample: Option<usize>,
    #[arg(long)]
    init_sigma: Option<f64>,
    /// Seed for model initialization, training and catalog clustering.
    #[arg(long)]
    seed: Option<u64>,
    /// L2 penalty of the validation-customer fit.
    #[arg(long)]
    l2: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Attribute,
    Precomputed,
    Combined,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Attribute => Channel::Attribute,
            ChannelArg::Precomputed => Channel::Precomputed,
            ChannelArg::Combined => Channel::Combined,
        }
    }
}

/// Fully resolved training configuration, written as `train.config.toml`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TrainRunConfig {
    channel: Channel,
    catalog: Option<PathBuf>,
    purchases: Option<PathBuf>,
    features: Option<PathBuf>,
    attribute_run: Option<PathBuf>,
    precomputed_run: Option<PathBuf>,
    resume: Option<PathBuf>,
    catalog_encoding: CatalogConfig,
    split: SplitConfig,
    model: ModelConfig,
    train: TrainConfig,
    fit: FitConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            channel: Channel::Attribute,
            catalog: None,
            purchases: None,
            features: None,
            attribute_run: None,
            precomputed_run: None,
            resume: None,
            catalog_encoding: CatalogConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Run directories; one table row per run and quadrant.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    purchases: PathBuf,
    #[arg(long, default_value = "all")]
    quadrant: String,
    /// Score a uniform pair sample per quadrant instead of every pair.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    purchases: PathBuf,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ItemSet {
    Training,
    Validation,
    All,
}

#[derive(Args, Serialize)]
struct RecommendArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    purchases: PathBuf,
    #[arg(long)]
    customer: String,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long, value_enum, default_value = "validation")]
    items: ItemSet,
}

#[derive(Args, Serialize)]
struct NeighborsArgs {
    #[arg(long)]
    out: PathBuf,
    /// Run directory holding the embedding store.
    #[arg(long, conflicts_with = "store")]
    run: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long = "item", required = true)]
    items: Vec<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MetricArg {
    Euclidean,
    Cosine,
}

#[derive(Args, Serialize)]
struct MapArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    purchases: PathBuf,
    /// Items to map (default: up to 4096 eligible items).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    min_sales: usize,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 200.0)]
    learning_rate: f64,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricArg,
    /// Momentum 0 and no adaptive gains.
    #[arg(long)]
    test_mode: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Recommend(a) => recommend(a),
        Command::Neighbors(a) => neighbors(a),
        Command::Map(a) => map(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("output directory {} does not exist", dir.display())))
    }
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    write_atomic(&dir.join(name), text.as_bytes())
}

fn write_config<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<String> {
    let text = toml::to_string(config).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
    write_text(dir, &format!("{command}.config.toml"), &text)?;
    Ok(text)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let tag_sizes: [usize; 4] = a
        .tag_sizes
        .clone()
        .try_into()
        .map_err(|_| Error::InvalidArgument("--tag-sizes needs exactly four values".into()))?;
    let config = WorldConfig {
        n_items: a.items,
        n_customers: a.customers,
        rank: a.rank,
        tag_sizes,
        tau_a: a.tau_a,
        feature_sizes: a.feature_sizes.clone(),
        tau_b: a.tau_b,
        noise_level: a.noise,
        target_density: a.density,
        bias_sd: a.bias_sd,
        seed: a.seed,
    };
    let world = PlantedWorld::generate(&config)?;
    let matrix = world.sample_purchases(fdna::rng::derive_seed(a.seed, &[1]))?;
    let manifest = world.manifest();
    write_text(&a.out, "catalog.jsonl", &catalog::records_to_jsonl(&world.catalog_records()))?;
    write_text(&a.out, "purchases.csv", &matrix.to_csv())?;
    world.features().write(&a.out.join("features.tsv"))?;
    world.write(&a.out.join("world.bin"))?;
    write_text(&a.out, "world.toml", &manifest)?;
    write_config(&a.out, "gen-data", &a)?;
    print!("{manifest}");
    println!("purchases = {}", matrix.nnz());
    Ok(())
}

fn resolve_train(a: &TrainArgs) -> Result<TrainRunConfig> {
    let mut c = match &a.config {
        Some(p) => toml::from_str(&read_text(p)?)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?,
        None => TrainRunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr => $($field:tt)+) => {
            if let Some(v) = $flag.clone() {
                c.$($field)+ = v;
            }
        };
    }
    if let Some(ch) = a.channel {
        c.channel = ch.into();
    }
    for (flag, field) in [
        (&a.catalog, &mut c.catalog),
        (&a.purchases, &mut c.purchases),
        (&a.features, &mut c.features),
        (&a.attribute_run, &mut c.attribute_run),
        (&a.precomputed_run, &mut c.precomputed_run),
        (&a.resume, &mut c.resume),
    ] {
        if flag.is_some() {
            field.clone_from(flag);
        }
    }
    set!(a.min_class_support => catalog_encoding.min_class_support);
    set!(a.price_clusters => catalog_encoding.price_clusters);
    set!(a.fabric_clusters => catalog_encoding.fabric_clusters);
    set!(a.item_val_fraction => split.item_validation_fraction);
    set!(a.customer_val_fraction => split.customer_validation_fraction);
    set!(a.split_seed => split.seed);
    set!(a.dim => model.dim);
    set!(a.hidden => model.hidden);
    set!(a.layers => model.layers);
    set!(a.dropout => model.dropout);
    set!(a.epochs => train.epochs);
    set!(a.learning_rate => train.learning_rate);
    set!(a.momentum => train.momentum);
    set!(a.batch_size => train.item_batch_size);
    set!(a.init_sigma => train.weight_init_sigma);
    set!(a.l2 => fit.l2);
    if a.bank_learning_rate.is_some() {
        c.train.bank_learning_rate = a.bank_learning_rate;
    }
    if a.negative_subsample.is_some() {
        c.train.negative_subsample = a.negative_subsample;
    }
    if let Some(s) = a.seed {
        c.model.seed = s;
        c.train.seed = s;
        c.catalog_encoding.seed = s;
    }
    c.train.validate()?;
    Ok(c)
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str, channel: Channel) -> Result<&'a PathBuf> {
    v.as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required for the {channel} channel")))
}

/// Item inputs of a run plus the vocabulary (attribute channel only).
struct Prepared {
    item_ids: Vec<String>,
    inputs: Vec<Input>,
    vocabulary: Option<AttributeVocabulary>,
    /// Combined channel: the frozen channels to store with the merge layer.
    frozen: Option<(ItemModel, Option<ItemModel>)>,
    base_split: Option<PathBuf>,
}

fn prepare_inputs(c: &TrainRunConfig) -> Result<Prepared> {
    match c.channel {
        Channel::Attribute => {
            let cat = Catalog::read_jsonl(required(&c.catalog, "catalog", c.channel)?)?;
            let prep = pipeline::prepare_catalog(&cat, &c.catalog_encoding)?;
            for id in &prep.price_excluded {
                eprintln!("warning: item {id} has a non-positive price and no price cluster");
            }
            Ok(Prepared {
                item_ids: cat.item_ids(),
                inputs: prep.inputs,
                vocabulary: Some(prep.vocabulary),
                frozen: None,
                base_split: None,
            })
        }
        Channel::Precomputed => {
            let features = FeatureChannel::read(required(&c.features, "features", c.channel)?)?;
            let item_ids = match &c.catalog {
                Some(p) => Catalog::read_jsonl(p)?.item_ids(),
                None => features.ids().to_vec(),
            };
            Ok(Prepared {
                inputs: pipeline::feature_inputs(&features, &item_ids)?,
                item_ids,
                vocabulary: None,
                frozen: None,
                base_split: None,
            })
        }
        Channel::Combined => {
            let a_dir = required(&c.attribute_run, "attribute-run", c.channel)?;
            let a_model = ItemModel::read(&a_dir.join(MODEL_FILE))?;
            if a_model.channel() != Channel::Attribute {
                return Err(Error::InvalidArgument(format!("{} is not an attribute run", a_dir.display())));
            }
            let a_store = EmbeddingStore::read(&a_dir.join(FDNA_FILE))?;
            let item_ids = a_store.ids().to_vec();
            let (b_rows, b_model): (Vec<Vec<f64>>, Option<ItemModel>) = match &c.precomputed_run {
                Some(b_dir) => {
                    let m = ItemModel::read(&b_dir.join(MODEL_FILE))?;
                    if m.channel() != Channel::Precomputed {
                        return Err(Error::InvalidArgument(format!("{} is not a precomputed run", b_dir.display())));
                    }
                    let store = EmbeddingStore::read(&b_dir.join(FDNA_FILE))?.subset(&item_ids)?;
                    ((0..store.len()).map(|i| store.row(i).to_vec()).collect(), Some(m))
                }
                None => {
                    let features = FeatureChannel::read(required(&c.features, "features", c.channel)?)?;
                    let rows = pipeline::feature_inputs(&features, &item_ids)?;
                    (pipeline::dense_rows(&rows), None)
                }
            };
            let a_table = FdnaTable::from_rows(&(0..a_store.len()).map(|i| a_store.row(i).to_vec()).collect::<Vec<_>>())?;
            Ok(Prepared {
                inputs: pipeline::merge_inputs(&a_table, &b_rows)?,
                item_ids,
                vocabulary: None,
                frozen: Some((a_model, b_model)),
                base_split: Some(a_dir.join(SPLIT_FILE)),
            })
        }
    }
}

fn train(a: TrainArgs) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let started = Instant::now();
    let c = resolve_train(&a)?;
    let prepared = prepare_inputs(&c)?;
    let purchases_path = c
        .purchases
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--purchases is required".into()))?;
    let (matrix, load) = pipeline::read_purchases(purchases_path, &prepared.item_ids)?;
    if load.duplicates > 0 {
        eprintln!("note: {} duplicate purchase records collapsed", load.duplicates);
    }

    let split_source = c.resume.as_ref().map(|r| r.join(SPLIT_FILE)).or(prepared.base_split.clone());
    let split = match &split_source {
        Some(p) => SplitManifest::from_text(&read_text(p)?)?.to_split(&matrix)?,
        None => pipeline::make_split(&matrix, &c.split)?,
    };
    let manifest = match &split_source {
        Some(p) => SplitManifest::from_text(&read_text(p)?)?,
        None => c.split.manifest(&split, &matrix),
    };

    let input_width = prepared.inputs.first().map_or(0, Input::width);
    let (model, bank, resumed_epochs) = match &c.resume {
        Some(dir) => {
            if let Some(vocab) = &prepared.vocabulary {
                let stored = AttributeVocabulary::from_text(&read_text(&dir.join(VOCAB_FILE))?)?;
                if stored.checksum() != vocab.checksum() {
                    return Err(Error::Data(format!(
                        "vocabulary checksum mismatch: run {} has {}, catalog gives {}",
                        dir.display(),
                        stored.checksum(),
                        vocab.checksum()
                    )));
                }
            }
            let previous = ItemModel::read(&dir.join(MODEL_FILE))?;
            if previous.channel() != c.channel {
                return Err(Error::InvalidArgument(format!(
                    "cannot resume a {} run as {}",
                    previous.channel(),
                    c.channel
                )));
            }
            let net = match previous {
                ItemModel::Attribute(m) | ItemModel::Precomputed(m) => m,
                ItemModel::Combined(m) => m.merge,
            };
            let bank = pipeline::read_bank(&dir.join(TRAIN_BANK_FILE), &matrix)?;
            let done = resumed_epoch_count(dir)?;
            (net, Some(bank), done)
        }
        None => {
            let net = match c.channel {
                Channel::Combined => {
                    let ModelConfig { dim, seed, .. } = c.model;
                    fdna::network::init_model(
                        &[fdna::network::LayerSpec::new(input_width, dim, fdna::network::Activation::Relu, 0.0)],
                        seed,
                        InitScale::He,
                    )?
                }
                _ => c.model.build(input_width)?,
            };
            (net, None, 0)
        }
    };

    let run = match bank {
        Some(mut bank) => {
            let mut model = model;
            let tt = split.view(&matrix, Quadrant::TT);
            let report = training::train_with_bank(&mut model, &mut bank, &prepared.inputs, &tt, &c.train)?;
            pipeline::finish_run(model, bank, report, &prepared.inputs, &matrix, &split, &c.fit)?
        }
        None => pipeline::train_run(model, &prepared.inputs, &matrix, &split, &c.train, &c.fit)?,
    };

    let item_model = match (c.channel, &prepared.frozen) {
        (Channel::Attribute, _) => ItemModel::Attribute(run.model.clone()),
        (Channel::Precomputed, _) => ItemModel::Precomputed(run.model.clone()),
        (Channel::Combined, Some((ItemModel::Attribute(a_net), b))) => {
            let second = match b {
                Some(ItemModel::Precomputed(m)) => SecondChannel::Model(m.clone()),
                _ => SecondChannel::Features,
            };
            ItemModel::Combined(CombinedModel::from_parts(a_net.clone(), second, run.model.clone())?)
        }
        (Channel::Combined, _) => unreachable!("combined inputs always carry the frozen channels"),
    };

    let config_text = write_config(&a.out, "train", &c)?;
    item_model.write(&a.out.join(MODEL_FILE), c.model.seed)?;
    pipeline::write_bank(&a.out.join(TRAIN_BANK_FILE), &run.train_bank, matrix.customer_ids())?;
    pipeline::write_bank(&a.out.join(VAL_BANK_FILE), &run.val_bank, matrix.customer_ids())?;
    EmbeddingStore::from_rows(prepared.item_ids.clone(), &run.fdna.rows())?.write(&a.out.join(FDNA_FILE))?;
    write_text(&a.out, SPLIT_FILE, &manifest.to_text())?;
    if let Some(v) = &prepared.vocabulary {
        write_text(&a.out, VOCAB_FILE, &v.to_text())?;
    }
    write_text(&a.out, "manifest.txt", &pipeline::run_manifest(&config_text, &run, resumed_epochs))?;
    write_text(&a.out, "timing.txt", &format!("wall_seconds {:.3}\n", started.elapsed().as_secs_f64()))?;

    let h = &run.train_report.loss_history;
    println!(
        "{} channel: loss {:.6} -> {:.6} over {} epochs; {} validation customers fitted",
        c.channel,
        h[0],
        run.train_report.final_loss,
        h.len() - 1,
        run.val_bank.len()
    );
    Ok(())
}

/// Epochs already recorded in a run manifest.
fn resumed_epoch_count(dir: &Path) -> Result<usize> {
    let text = read_text(&dir.join("manifest.txt"))?;
    let prior: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("resumed_after_epochs "))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0);
    let losses = text.lines().filter(|l| l.starts_with("loss ")).count();
    Ok(prior + losses.saturating_sub(1))
}

/// Artifacts of a finished training run, aligned with a purchases file.
struct LoadedRun {
    channel: Channel,
    fdna: FdnaTable,
    matrix: PurchaseMatrix,
    split: QuadrantSplit,
    train_bank: CustomerBank,
    val_bank: CustomerBank,
}

impl LoadedRun {
    fn load(dir: &Path, purchases: &Path) -> Result<Self> {
        let store = EmbeddingStore::read(&dir.join(FDNA_FILE))?;
        let (matrix, _) = pipeline::read_purchases(purchases, store.ids())?;
        let rows: Vec<Vec<f64>> = (0..store.len()).map(|i| store.row(i).to_vec()).collect();
        Ok(LoadedRun {
            channel: ItemModel::read(&dir.join(MODEL_FILE))?.channel(),
            fdna: FdnaTable::from_rows(&rows)?,
            split: SplitManifest::from_text(&read_text(&dir.join(SPLIT_FILE))?)?.to_split(&matrix)?,
            train_bank: pipeline::read_bank(&dir.join(TRAIN_BANK_FILE), &matrix)?,
            val_bank: pipeline::read_bank(&dir.join(VAL_BANK_FILE), &matrix)?,
            matrix,
        })
    }

    fn bank_for_customer(&self, j: usize) -> &CustomerBank {
        if self.split.is_train_customer(j) {
            &self.train_bank
        } else {
            &self.val_bank
        }
    }

    fn scorer(&self, q: Quadrant) -> Result<Scorer<'_>> {
        Scorer::new(&self.fdna, if q.training_customers() { &self.train_bank } else { &self.val_bank })
    }
}

fn parse_quadrants(s: &str) -> Result<Vec<Quadrant>> {
    if s == "all" {
        Ok(Quadrant::ALL.to_vec())
    } else {
        s.split(',').map(str::parse).collect()
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let quadrants = parse_quadrants(&a.quadrant)?;
    let mut table = String::from("model\tquadrant\tauc\tpairs\tpositives\n");
    let mut labels: Vec<String> = Vec::new();
    for dir in &a.runs {
        let run = LoadedRun::load(dir, &a.purchases)?;
        let mut label = run.channel.to_string();
        let mut n = 2;
        while labels.contains(&label) {
            label = format!("{}-{n}", run.channel);
            n += 1;
        }
        labels.push(label.clone());
        for &q in &quadrants {
            let view = run.split.view(&run.matrix, q);
            let scorer = run.scorer(q)?;
            let (scores, y) = match a.pairs {
                Some(n) => {
                    let pairs = evaluation::sample_pairs(&view, n, a.seed);
                    evaluation::score_pairs(&scorer, &view, &pairs)?
                }
                None => evaluation::score_quadrant(&scorer, &view)?,
            };
            let roc = evaluation::roc_auc(&scores, &y)?;
            let positives = y.iter().filter(|&&v| v).count();
            writeln!(table, "{label}\t{q}\t{:.6}\t{}\t{positives}", roc.auc, y.len()).unwrap();
            write_text(&a.out, &format!("roc.{label}.{q}.tsv"), &roc.to_tsv())?;
        }
    }
    write_text(&a.out, "auc.tsv", &table)?;
    write_config(&a.out, "evaluate", &a)?;
    print!("{table}");
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let run = LoadedRun::load(&a.run, &a.purchases)?;
    let mut r = fdna::rng::rng(a.seed);
    let (mut p, mut y) = (Vec::with_capacity(a.pairs), Vec::with_capacity(a.pairs));
    for _ in 0..a.pairs {
        use rand::Rng;
        let i = r.random_range(0..run.matrix.n_items());
        let j = r.random_range(0..run.matrix.n_customers());
        let bank = run.bank_for_customer(j);
        let row = bank
            .row_of(j)
            .ok_or_else(|| Error::Data(format!("customer {} missing from bank", run.matrix.customer_ids()[j])))?;
        p.push(training::sigmoid(bank.logit(row, run.fdna.row(i))));
        y.push(run.matrix.contains(i, j));
    }
    let report = evaluation::calibrate(&p, &y, a.bins)?;
    write_text(&a.out, "calibration.tsv", &report.to_tsv())?;
    write_config(&a.out, "calibrate", &a)?;
    println!("{} pairs in {} bins, positive rate {:e}", report.sample_size, report.bin_count, report.positive_rate());
    Ok(())
}

fn recommend(a: RecommendArgs) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let run = LoadedRun::load(&a.run, &a.purchases)?;
    let j = *run
        .matrix
        .customer_index()
        .get(a.customer.as_str())
        .ok_or_else(|| Error::Data(format!("unknown customer `{}`", a.customer)))?;
    let bank = run.bank_for_customer(j);
    let row = bank
        .row_of(j)
        .ok_or_else(|| Error::Data(format!("customer `{}` missing from bank", a.customer)))?;
    let items: Vec<usize> = match a.items {
        ItemSet::Training => run.split.item_train.clone(),
        ItemSet::Validation => run.split.item_val.clone(),
        ItemSet::All => (0..run.matrix.n_items()).collect(),
    };
    let scorer = Scorer::new(&run.fdna, bank)?;
    let mut out = String::from("rank\titem_id\tprobability\n");
    for (rank, (i, logit)) in evaluation::rank_items(&scorer, &items, row).into_iter().take(a.top).enumerate() {
        writeln!(out, "{}\t{}\t{:e}", rank + 1, run.matrix.item_ids()[i], training::sigmoid(logit)).unwrap();
    }
    write_text(&a.out, "recommend.tsv", &out)?;
    write_config(&a.out, "recommend", &a)?;
    print!("{out}");
    Ok(())
}

fn neighbors(a: NeighborsArgs) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let path = match (&a.run, &a.store) {
        (Some(run), None) => run.join(FDNA_FILE),
        (None, Some(store)) => store.clone(),
        _ => return Err(Error::InvalidArgument("give exactly one of --run or --store".into())),
    };
    let store = EmbeddingStore::read(&path)?;
    let mut out = String::from("query_id\trank\tneighbor_id\tdistance\n");
    for item in &a.items {
        out.push_str(&similarity::nearest_neighbors(&store, item, a.k)?.to_tsv());
    }
    write_text(&a.out, "neighbors.tsv", &out)?;
    write_config(&a.out, "neighbors", &a)?;
    print!("{out}");
    Ok(())
}

fn map(a: MapArgs) -> Result<()> {
    ensure_out_dir(&a.out)?;
    let store = EmbeddingStore::read(&a.run.join(FDNA_FILE))?;
    let (matrix, _) = pipeline::read_purchases(&a.purchases, store.ids())?;
    let sales = matrix.item_counts();
    let eligible = sales.iter().filter(|&&s| s >= a.min_sales).count();
    let n = a.n.unwrap_or(eligible.min(4096));
    let picked = tsne::sample_items(&sales, n, a.min_sales, a.seed)?;
    let points: Vec<Vec<f64>> = picked.iter().map(|&i| store.row(i).to_vec()).collect();
    let ids: Vec<String> = picked.iter().map(|&i| store.ids()[i].clone()).collect();
    let config = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iterations,
        learning_rate: a.learning_rate,
        seed: a.seed,
        metric: match a.metric {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        },
        test_mode: a.test_mode,
        ..TsneConfig::default()
    };
    let result = tsne::tsne(&points, &config)?;
    write_text(&a.out, "map.tsv", &result.to_tsv(&ids)?)?;
    write_text(&a.out, "kl.tsv", &result.kl_tsv())?;
    write_config(&a.out, "map", &a)?;
    println!(
        "{} items mapped, final KL {:.6}",
        ids.len(),
        result.kl_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}
