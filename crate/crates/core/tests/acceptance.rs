//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fdna::catalog::Catalog;
use fdna::evaluation::{auc, calibrate};
use fdna::kmeans::{kmeans, DEFAULT_MAX_ITERATIONS};
use fdna::network::{init_model, EmbeddingModel, tower_specs, CombinedModel, InitScale, Input, SecondChannel};
use fdna::pipeline::*;
use fdna::purchases::{PurchaseMatrix, Quadrant, QuadrantSplit};
use fdna::rng;
use fdna::similarity::cosine_distance;
use fdna::sparse::SparseVector;
use fdna::synthetic::{PlantedWorld, WorldConfig};
use fdna::training::{
    cross_entropy, exact_loss, fit_customers, full_gradient, init_customer_bank, loss_over_quadrant, CustomerBank,
    FitConfig, TrainConfig,
};
use fdna::tsne::{affinities, tsne, Metric, TsneConfig};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

fn verdict(n: usize, name: &str, pass: bool, elapsed: Duration, detail: String) {
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n:>2} {} {name}: {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed < Duration::from_secs(secs)
}

// 1

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn central(f: &mut dyn FnMut(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5;
    (f(x + h) - f(x - h)) / (2.0 * h)
}

struct Instance {
    matrix: PurchaseMatrix,
    split: QuadrantSplit,
    inputs: Vec<Input>,
}

fn random_instance(seed: u64) -> (Instance, usize) {
    let mut r = rng::rng(seed);
    let n = r.random_range(2..=20);
    let k = r.random_range(2..=10);
    let width = r.random_range(4..=12);
    let inputs: Vec<Input> = (0..n)
        .map(|_| {
            if r.random_bool(0.5) {
                let active = r.random_range(1..=3.min(width));
                let pairs = (0..active).map(|_| (r.random_range(0..width), 1.0)).collect();
                Input::Sparse(SparseVector::from_pairs(width, pairs))
            } else {
                Input::Dense((0..width).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
            }
        })
        .collect();
    let density = r.random_range(0.1..0.6);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter(|_| r.random_bool(density))
        .collect();
    let ids = |p: &str, m: usize| (0..m).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let (matrix, _) = PurchaseMatrix::from_pairs(ids("i", n), ids("c", k), pairs).unwrap();
    let split = QuadrantSplit::new(n, k, (0..n).collect(), vec![], (0..k).collect(), vec![]).unwrap();
    (Instance { matrix, split, inputs }, width)
}

/// Smallest |pre-activation| over every unit and item; finite differences are
/// only meaningful away from the ReLU kink.
fn kink_margin(model: &EmbeddingModel, inputs: &[Input]) -> f64 {
    let mut margin = f64::INFINITY;
    for x in inputs {
        let mut a = match x {
            Input::Sparse(s) => s.to_dense(),
            Input::Dense(v) => v.clone(),
        };
        for layer in model.layers() {
            let n_in = layer.spec.input_width;
            let z: Vec<f64> = (0..layer.spec.output_width)
                .map(|o| layer.bias[o] + (0..n_in).map(|i| layer.weights[o * n_in + i] * a[i]).sum::<f64>())
                .collect();
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    margin
}

/// Worst relative error over all parameters, or `None` when a unit sits within
/// the kink margin.
fn gradient_instance(seed: u64) -> Option<f64> {
    let (inst, width) = random_instance(seed);
    let view = inst.split.view(&inst.matrix, Quadrant::TT);
    let mut r = rng::rng(seed ^ 0x5eed);
    let d = r.random_range(2..=5);
    let hidden: Vec<usize> = (0..r.random_range(0..=2)).map(|_| r.random_range(3..=8)).collect();
    let mut model = init_model(&tower_specs(width, &hidden, d, 0.0), seed, InitScale::Fixed(0.7)).unwrap();
    for layer in model.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = r.random::<f64>() - 0.2);
    }
    if kink_margin(&model, &inst.inputs) < 1e-3 {
        return None;
    }
    let bank = init_customer_bank(&view, d, seed, 0.8);
    let g = full_gradient(&model, &bank, &inst.inputs, &view).unwrap();
    let mut worst: f64 = 0.0;

    let params = model.flat_params();
    for (p, &analytic) in g.network.flatten().iter().enumerate() {
        let mut m = model.clone();
        let mut f = |x: f64| {
            let mut q = params.clone();
            q[p] = x;
            m.set_flat_params(&q).unwrap();
            exact_loss(&m, &inst.inputs, &view, &bank).unwrap().mean
        };
        worst = worst.max(rel_err(analytic, central(&mut f, params[p])));
    }
    let nw = bank.all_weights().len();
    for p in 0..nw + bank.len() {
        let mut f = |x: f64| {
            let mut w = bank.all_weights().to_vec();
            let mut b = bank.all_biases().to_vec();
            if p < nw {
                w[p] = x
            } else {
                b[p - nw] = x
            }
            let moved = CustomerBank::from_parts(bank.customers().to_vec(), d, w, b).unwrap();
            exact_loss(&model, &inst.inputs, &view, &moved).unwrap().mean
        };
        let (x0, analytic) = if p < nw {
            (bank.all_weights()[p], g.bank_weights[p])
        } else {
            (bank.all_biases()[p - nw], g.bank_biases[p - nw])
        };
        worst = worst.max(rel_err(analytic, central(&mut f, x0)));
    }
    let fdna: Vec<Vec<f64>> = view.items().iter().map(|&i| model.infer(&inst.inputs[i]).unwrap()).collect();
    for row in 0..fdna.len() {
        for c in 0..d {
            let mut f = |x: f64| {
                let mut t = fdna.clone();
                t[row][c] = x;
                loss_over_quadrant(&t, &view, &bank).unwrap().mean
            };
            worst = worst.max(rel_err(g.fdna[row][c], central(&mut f, fdna[row][c])));
        }
    }
    Some(worst)
}

#[test]
fn c01_gradient_correctness() {
    let t = Instant::now();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    let mut seed = 1000;
    while checked < 100 {
        match gradient_instance(seed) {
            Some(w) => {
                worst = worst.max(w);
                checked += 1;
            }
            None => skipped += 1,
        }
        seed += 1;
    }
    let e = t.elapsed();
    verdict(
        1,
        "gradient check",
        worst < 1e-4 && within(e, 10),
        e,
        format!("{checked} instances ({skipped} redrawn near a ReLU kink), worst relative error {worst:.2e} (limit 1e-4)"),
    );
}

// 2

#[test]
fn c02_loss_sanity() {
    let t = Instant::now();
    let labels: Vec<bool> = (0..1000).map(|i| i % 7 == 0).collect();
    let uniform = cross_entropy(&vec![0.5; 1000], &labels).unwrap().mean;
    let perfect: Vec<f64> = labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
    let ce = cross_entropy(&perfect, &labels).unwrap();
    let d_uniform = (uniform - std::f64::consts::LN_2).abs();
    let e = t.elapsed();
    verdict(
        2,
        "loss sanity",
        d_uniform < 1e-12 && ce.mean < 1e-10 && ce.clamped == 1000,
        e,
        format!(
            "|L(0.5) - ln 2| = {d_uniform:.1e}, perfect loss {:.1e} with {} clamped",
            ce.mean, ce.clamped
        ),
    );
}

// 3

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice: u128 = 0;
    let (mut p, mut n) = (0u128, 0u128);
    for (a, &ya) in scores.iter().zip(labels) {
        if ya {
            p += 1;
        } else {
            n += 1;
            continue;
        }
        for (b, &yb) in scores.iter().zip(labels) {
            if !yb {
                twice += if a > b {
                    2
                } else if a == b {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

#[test]
fn c03_auc_oracle_equivalence() {
    let t = Instant::now();
    let mut r = rng::rng(3);
    let mut mismatches = 0;
    let mut tied = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..=1000);
        let levels = if r.random_bool(0.5) { r.random_range(1..=20) } else { 0 };
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if levels > 0 {
                    r.random_range(0..levels) as f64 / levels as f64
                } else {
                    r.random::<f64>()
                }
            })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        if levels > 0 {
            tied += 1;
        }
        if auc(&scores, &labels).unwrap() != brute_auc(&scores, &labels) {
            mismatches += 1;
        }
    }
    let e = t.elapsed();
    verdict(
        3,
        "AUC equals brute force",
        mismatches == 0 && within(e, 30),
        e,
        format!("1000 instances ({tied} with ties), {mismatches} mismatches"),
    );
}

// 4

#[test]
fn c04_planted_model_recovery() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let t = Instant::now();
        let world = PlantedWorld::generate(&WorldConfig {
            n_items: 500,
            n_customers: 200,
            rank: 8,
            noise_level: 0.0,
            target_density: 0.02,
            seed: 1,
            ..WorldConfig::default()
        })
        .unwrap();
        let matrix = world.sample_purchases(2).unwrap();
        let catalog = Catalog::from_records(world.catalog_records()).unwrap();
        let prep = prepare_catalog(
            &catalog,
            &CatalogConfig { min_class_support: 2, price_clusters: 8, fabric_clusters: 8, seed: 3 },
        )
        .unwrap();
        let split = make_split(
            &matrix,
            &SplitConfig { item_validation_fraction: 0.2, customer_validation_fraction: 0.2, seed: 4 },
        )
        .unwrap();
        let mc = ModelConfig { dim: 16, hidden: vec![], layers: 2, dropout: 0.0, seed: 5 };
        let tc = TrainConfig { epochs: 100, learning_rate: 0.05, item_batch_size: 16, seed: 6, ..Default::default() };
        let fc = FitConfig { l2: 1e-4, ..Default::default() };
        let run = train_run(mc.build(prep.vocabulary.len()).unwrap(), &prep.inputs, &matrix, &split, &tc, &fc).unwrap();
        let vv = run.quadrant_auc(&matrix, &split, Quadrant::VV, None, 0).unwrap();
        let (items, customers) = (split.items(Quadrant::VV), split.customers(Quadrant::VV));
        let oracle = world.oracle_auc(items, customers, 7).unwrap();
        let e = t.elapsed();
        verdict(
            4,
            "planted model recovery",
            oracle - vv <= 0.05 && within(e, 300),
            e,
            format!("vv AUC {vv:.4}, oracle {oracle:.4}, gap {:.4} (limit 0.05)", oracle - vv),
        );
    });
}

// 5, 6, 7

struct Trio {
    matrix: PurchaseMatrix,
    split: QuadrantSplit,
    runs: Vec<(&'static str, TrainedRun)>,
}

fn trio() -> &'static Trio {
    static TRIO: OnceLock<Trio> = OnceLock::new();
    TRIO.get_or_init(|| {
        let world = PlantedWorld::generate(&WorldConfig {
            n_items: 2000,
            n_customers: 1000,
            rank: 8,
            target_density: 0.02,
            tau_a: 0.1,
            tau_b: 0.5,
            seed: 1,
            ..WorldConfig::default()
        })
        .unwrap();
        let matrix = world.sample_purchases(2).unwrap();
        let catalog = Catalog::from_records(world.catalog_records()).unwrap();
        let prep = prepare_catalog(
            &catalog,
            &CatalogConfig { min_class_support: 5, price_clusters: 16, fabric_clusters: 16, seed: 3 },
        )
        .unwrap();
        let split = make_split(
            &matrix,
            &SplitConfig { item_validation_fraction: 0.2, customer_validation_fraction: 0.2, seed: 4 },
        )
        .unwrap();
        let d = 16;
        let mc = ModelConfig { dim: d, hidden: vec![], layers: 2, dropout: 0.0, seed: 5 };
        let tc = TrainConfig { epochs: 100, learning_rate: 0.05, item_batch_size: 16, seed: 6, ..Default::default() };
        let fc = FitConfig { l2: 1e-4, ..Default::default() };
        let attr = train_run(mc.build(prep.vocabulary.len()).unwrap(), &prep.inputs, &matrix, &split, &tc, &fc).unwrap();
        let channel = world.features();
        let fw = channel.width();
        let feats = feature_inputs(&channel, matrix.item_ids()).unwrap();
        let feat = train_run(mc.build(fw).unwrap(), &feats, &matrix, &split, &tc, &fc).unwrap();
        let combined = CombinedModel::new(attr.model.clone(), SecondChannel::Model(feat.model.clone()), fw, d, 8, InitScale::He)
            .unwrap();
        let merge = merge_inputs(&attr.fdna, &feat.fdna.rows()).unwrap();
        let comb = train_run(combined.merge.clone(), &merge, &matrix, &split, &tc, &fc).unwrap();
        Trio { matrix, split, runs: vec![("attribute", attr), ("features", feat), ("combined", comb)] }
    })
}

fn quadrant_aucs(t: &Trio, run: &TrainedRun) -> [f64; 4] {
    Quadrant::ALL.map(|q| run.quadrant_auc(&t.matrix, &t.split, q, None, 0).unwrap())
}

#[test]
fn c05_channel_ordering() {
    let start = Instant::now();
    let t = trio();
    let aucs: Vec<[f64; 4]> = t.runs.iter().map(|(_, r)| quadrant_aucs(t, r)).collect();
    let e = start.elapsed();
    let vv = |m: usize| aucs[m][3];
    let mut pass = vv(2) >= vv(0).max(vv(1)) - 0.01;
    let mut detail = format!(
        "vv attribute {:.4} features {:.4} combined {:.4}",
        vv(0),
        vv(1),
        vv(2)
    );
    for (m, (name, _)) in t.runs.iter().enumerate() {
        let [tt, tv, vt, vvm] = aucs[m];
        pass &= tt >= vt && tv >= vvm && (tt - tv).abs() < 0.03 && (vt - vvm).abs() < 0.03;
        detail += &format!("; {name} tt {tt:.4} tv {tv:.4} vt {vt:.4} vv {vvm:.4}");
    }
    verdict(5, "channel ordering", pass && within(e, 600), e, detail);
}

#[test]
fn c06_cold_start_customers() {
    let t = trio();
    let (_, attr) = &t.runs[0];
    let start = Instant::now();
    let view = t.split.view(&t.matrix, Quadrant::TV);
    let (bank, report) = fit_customers(&attr.fdna, &view, &FitConfig { l2: 1e-4, ..Default::default() }).unwrap();
    let scorer = fdna::evaluation::Scorer::new(&attr.fdna, &bank).unwrap();
    let tv = fdna::evaluation::quadrant_auc(&scorer, &view, None, 0).unwrap();
    let tt = attr.quadrant_auc(&t.matrix, &t.split, Quadrant::TT, None, 0).unwrap();
    let e = start.elapsed();
    let converged = report.converged.iter().filter(|&&c| c).count();
    verdict(
        6,
        "cold-start customers",
        (tt - tv).abs() < 0.03 && within(e, 120),
        e,
        format!(
            "tt {tt:.4} tv {tv:.4} gap {:.4} (limit 0.03), {converged}/{} fits converged",
            (tt - tv).abs(),
            bank.len()
        ),
    );
}

#[test]
fn c07_calibration() {
    let t = trio();
    let (_, comb) = &t.runs[2];
    let start = Instant::now();
    let (p, y) = sample_scored_pairs(comb, &t.matrix, &t.split, 1_000_000, 7).unwrap();
    let report = calibrate(&p, &y, 50).unwrap();
    let low = &report.bins[0];
    let floor = low.empirical_rate.max(1.0 / low.count as f64);
    let assessed: Vec<_> = report.bins.iter().filter(|b| b.mean_predicted >= 10.0 * floor).collect();
    let ok = assessed
        .iter()
        .filter(|b| (b.empirical_rate - b.mean_predicted).abs() <= 4.0 * b.binomial_sd())
        .count();
    let e = start.elapsed();
    let frac = ok as f64 / assessed.len().max(1) as f64;
    verdict(
        7,
        "calibration",
        !assessed.is_empty() && frac >= 0.95 && within(e, 120),
        e,
        format!(
            "{ok}/{} assessed bins within 4 sd ({:.1}%), density floor {floor:.2e}",
            assessed.len(),
            100.0 * frac
        ),
    );
}

// 8

#[test]
fn c08_cosine_properties() {
    let t = Instant::now();
    let mut r = rng::rng(8);
    let mut failures = BTreeMap::new();
    let mut note = |k: &'static str| *failures.entry(k).or_insert(0) += 1;
    for _ in 0..10_000 {
        let dim = r.random_range(1..=32);
        let nonneg = r.random_bool(0.5);
        let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            loop {
                let v: Vec<f64> = (0..dim)
                    .map(|_| {
                        let x: f64 = StandardNormal.sample(r);
                        if nonneg {
                            x.abs()
                        } else {
                            x
                        }
                    })
                    .collect();
                if v.iter().any(|&x| x != 0.0) {
                    return v;
                }
            }
        };
        let f = draw(&mut r);
        let g = draw(&mut r);
        let d = cosine_distance(&f, &g).unwrap();
        if d != cosine_distance(&g, &f).unwrap() {
            note("symmetry");
        }
        let a = r.random_range(1e-3..1e3);
        let b = r.random_range(1e-3..1e3);
        let fa: Vec<f64> = f.iter().map(|x| a * x).collect();
        let gb: Vec<f64> = g.iter().map(|x| b * x).collect();
        if (cosine_distance(&fa, &gb).unwrap() - d).abs() > 1e-12 {
            note("scale invariance");
        }
        if cosine_distance(&f, &f).unwrap().abs() > 1e-12 {
            note("self distance");
        }
        if !(0.0..=2.0).contains(&d) || (nonneg && !(0.0..=1.0).contains(&d)) {
            note("range");
        }
    }
    let e = t.elapsed();
    verdict(
        8,
        "cosine distance properties",
        failures.is_empty() && within(e, 5),
        e,
        format!("10000 cases, failures {failures:?}"),
    );
}

// 9

fn blobs(n: usize, dim: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng::rng(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let points = labels
        .iter()
        .map(|&c| {
            (0..dim)
                .map(|k| {
                    let x: f64 = StandardNormal.sample(&mut r);
                    x + if k == 0 { sep * c as f64 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    (points, labels)
}

#[test]
fn c09_tsne_invariants() {
    let t = Instant::now();
    let (pts, _) = blobs(120, 5, 4.0, 91);
    let aff = affinities(&pts, 15.0, Metric::Euclidean).unwrap();
    let total: f64 = aff.p.iter().sum();
    let perp_err = aff.entropies.iter().map(|h| (h.exp() - 15.0).abs() / 15.0).fold(0.0, f64::max);

    let plain = tsne(
        &pts,
        &TsneConfig {
            perplexity: 15.0,
            iterations: 300,
            early_exaggeration_iters: 50,
            learning_rate: 20.0,
            test_mode: true,
            seed: 92,
            ..TsneConfig::default()
        },
    )
    .unwrap();
    let increases = plain.kl_history[51..].windows(2).filter(|w| w[1] > w[0] + 1e-12).count();

    let (pts, labels) = blobs(400, 10, 12.0, 93);
    let map = tsne(&pts, &TsneConfig { perplexity: 30.0, seed: 94, ..TsneConfig::default() }).unwrap();
    let coords: Vec<Vec<f64>> = map.coordinates.iter().map(|c| c.to_vec()).collect();
    let km = kmeans(&coords, 2, 95, DEFAULT_MAX_ITERATIONS).unwrap();
    let same = km.assignments.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / 400.0;
    let agreement = same.max(1.0 - same);
    let e = t.elapsed();
    verdict(
        9,
        "t-SNE invariants",
        (total - 1.0).abs() < 1e-9 && perp_err < 1e-3 && increases == 0 && agreement >= 0.95 && within(e, 120),
        e,
        format!(
            "sum P - 1 = {:.1e}, perplexity rel err {perp_err:.1e}, plain-phase KL increases {increases}, \
             two-cluster agreement {:.1}%",
            total - 1.0,
            100.0 * agreement
        ),
    );
}

// 10

fn fdna(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_fdna")).current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "fdna {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn pipeline(root: &Path) {
    for d in ["data", "a", "ar", "b", "c", "ev", "cal", "rec", "nb", "map"] {
        std::fs::create_dir_all(root.join(d)).unwrap();
    }
    fdna(root, &["gen-data", "--out", "data", "--items", "400", "--customers", "150", "--density", "0.02", "--seed", "7"]);
    let common = ["--purchases", "data/purchases.csv", "--dim", "8", "--epochs", "10", "--batch-size", "16"];
    let mut a = vec!["train", "--out", "a", "--channel", "attribute", "--catalog", "data/catalog.jsonl"];
    a.extend(common);
    a.extend(["--layers", "2", "--min-class-support", "2", "--price-clusters", "6", "--fabric-clusters", "6"]);
    fdna(root, &a);
    let mut b = vec!["train", "--out", "b", "--channel", "precomputed", "--catalog", "data/catalog.jsonl"];
    b.extend(["--features", "data/features.tsv", "--layers", "2"]);
    b.extend(common);
    fdna(root, &b);
    let mut c = vec!["train", "--out", "c", "--channel", "combined", "--attribute-run", "a", "--precomputed-run", "b"];
    c.extend(common);
    fdna(root, &c);
    let mut resumed = vec!["train", "--out", "ar", "--resume", "a", "--channel", "attribute", "--catalog", "data/catalog.jsonl"];
    resumed.extend(common);
    resumed.extend(["--layers", "2", "--min-class-support", "2", "--price-clusters", "6", "--fabric-clusters", "6"]);
    fdna(root, &resumed);
    let ev = ["evaluate", "--out", "ev", "--run", "a", "--run", "b", "--run", "c", "--purchases", "data/purchases.csv"];
    fdna(root, &ev);
    fdna(root, &["calibrate", "--out", "cal", "--run", "c", "--purchases", "data/purchases.csv", "--pairs", "100000"]);
    let purchases = std::fs::read_to_string(root.join("data/purchases.csv")).unwrap();
    let customer = purchases.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    fdna(root, &["recommend", "--out", "rec", "--run", "c", "--purchases", "data/purchases.csv", "--customer", &customer]);
    fdna(root, &["neighbors", "--out", "nb", "--run", "a", "--item", "sku000001", "--item", "sku000002", "--k", "5"]);
    let map = ["map", "--out", "map", "--run", "a", "--purchases", "data/purchases.csv", "--n", "150", "--iterations", "250"];
    fdna(root, &map);
}

fn checksums(root: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != "timing.txt" {
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), hex::encode(digest));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn c10_cli_determinism() {
    let t = Instant::now();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    pipeline(first.path());
    pipeline(second.path());
    let a = checksums(first.path());
    let b = checksums(second.path());
    let differing: Vec<_> = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.display().to_string()).collect();
    let e = t.elapsed();
    verdict(
        10,
        "CLI determinism",
        !a.is_empty() && a.len() == b.len() && differing.is_empty() && within(e, 600),
        e,
        format!("{} artifacts compared, differing {differing:?}", a.len()),
    );
}
