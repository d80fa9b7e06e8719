use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdna")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, name: &str, seed: &str) {
    fs::create_dir_all(dir.join(name)).unwrap();
    ok(dir, &["gen-data", "--out", name, "--items", "150", "--customers", "60", "--density", "0.05", "--seed", seed]);
}

const ATTR: [&str; 10] =
    ["--channel", "attribute", "--min-class-support", "2", "--price-clusters", "4", "--fabric-clusters", "4", "--layers", "2"];

fn train_attr(dir: &Path, data: &str, out: &str, extra: &[&str]) -> Output {
    fs::create_dir_all(dir.join(out)).unwrap();
    let catalog = format!("{data}/catalog.jsonl");
    let purchases = format!("{data}/purchases.csv");
    let mut args = vec!["train", "--out", out, "--catalog", &catalog, "--purchases", &purchases];
    args.extend(ATTR);
    args.extend(extra);
    run(dir, &args)
}

#[test]
fn missing_output_directory_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gen-data", "--out", "nowhere", "--items", "10", "--customers", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("output directory nowhere does not exist"));
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train", "--no-such-flag"]);
    assert!(!out.status.success());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "data", "1");
    fs::write(d.join("run.toml"), "[model]\ndim = 4\n\n[train]\nepochs = 2\nitem_batch_size = 8\n").unwrap();
    let out = train_attr(d, "data", "a", &["--config", "run.toml", "--dim", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let used: toml::Table = fs::read_to_string(d.join("a/train.config.toml")).unwrap().parse().unwrap();
    assert_eq!(used["model"]["dim"].as_integer(), Some(5));
    assert_eq!(used["train"]["epochs"].as_integer(), Some(2));
    assert_eq!(used["train"]["item_batch_size"].as_integer(), Some(8));
    for f in ["model.bin", "bank.train.bin", "bank.val.bin", "fdna.emb", "split.txt", "vocab.txt", "manifest.txt", "timing.txt"] {
        assert!(d.join("a").join(f).is_file(), "missing {f}");
    }
    let manifest = fs::read_to_string(d.join("a/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.starts_with("loss ")).count(), 3);
}

#[test]
fn resume_checks_the_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "data", "1");
    let first = train_attr(d, "data", "a", &["--dim", "4", "--epochs", "2"]);
    assert!(first.status.success());
    let resumed = train_attr(d, "data", "b", &["--dim", "4", "--epochs", "2", "--resume", "a"]);
    assert!(resumed.status.success(), "{}", String::from_utf8_lossy(&resumed.stderr));
    let manifest = fs::read_to_string(d.join("b/manifest.txt")).unwrap();
    assert!(manifest.contains("resumed_after_epochs"));
    fs::create_dir_all(d.join("c")).unwrap();
    let clash = run(
        d,
        &[
            "train", "--out", "c", "--catalog", "data/catalog.jsonl", "--purchases", "data/purchases.csv",
            "--channel", "attribute", "--min-class-support", "30", "--dim", "4", "--epochs", "2", "--resume", "a",
        ],
    );
    assert_eq!(clash.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&clash.stderr).contains("vocabulary checksum mismatch"));
}

#[test]
fn evaluation_outputs_have_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "data", "3");
    assert!(train_attr(d, "data", "a", &["--dim", "4", "--epochs", "2"]).status.success());
    for sub in ["ev", "nb", "rec", "cal"] {
        fs::create_dir_all(d.join(sub)).unwrap();
    }
    ok(d, &["evaluate", "--out", "ev", "--run", "a", "--purchases", "data/purchases.csv"]);
    let auc = fs::read_to_string(d.join("ev/auc.tsv")).unwrap();
    let mut lines = auc.lines();
    assert_eq!(lines.next(), Some("model\tquadrant\tauc\tpairs\tpositives"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    let quadrants: Vec<&str> = rows.iter().map(|r| r[1]).collect();
    assert_eq!(quadrants, ["tt", "tv", "vt", "vv"]);
    for r in &rows {
        assert!(d.join(format!("ev/roc.{}.{}.tsv", r[0], r[1])).is_file());
    }

    ok(d, &["neighbors", "--out", "nb", "--store", "a/fdna.emb", "--item", "sku000003", "--k", "4"]);
    let nb = fs::read_to_string(d.join("nb/neighbors.tsv")).unwrap();
    assert_eq!(nb.lines().count(), 5);

    ok(d, &["calibrate", "--out", "cal", "--run", "a", "--purchases", "data/purchases.csv", "--bins", "10", "--pairs", "5000"]);
    assert_eq!(fs::read_to_string(d.join("cal/calibration.tsv")).unwrap().lines().count(), 11);

    let purchases = fs::read_to_string(d.join("data/purchases.csv")).unwrap();
    let customer = purchases.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    ok(d, &["recommend", "--out", "rec", "--run", "a", "--purchases", "data/purchases.csv", "--customer", &customer, "--top", "7"]);
    assert_eq!(fs::read_to_string(d.join("rec/recommend.tsv")).unwrap().lines().count(), 8);
    let unknown = run(d, &["recommend", "--out", "rec", "--run", "a", "--purchases", "data/purchases.csv", "--customer", "nobody"]);
    assert!(!unknown.status.success());
}

#[test]
fn divergence_exits_with_the_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "data", "4");
    let out = train_attr(d, "data", "a", &["--dim", "4", "--epochs", "3", "--learning-rate", "1e200"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
