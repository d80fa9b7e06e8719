//! Item catalog: ingestion, derived price/fabric labels, and one-hot attribute encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;
use crate::error::{Error, Result};
use crate::kmeans::{self, KMeans};
use crate::rng;
use crate::sparse::SparseVector;

/// Tag families in encoding order.
pub const FAMILY_NAMES: [&str; 6] = [
    "brand",
    "commodity_group",
    "main_color",
    "pattern",
    "price_cluster",
    "fabric_cluster",
];
pub const BRAND: usize = 0;
pub const COMMODITY_GROUP: usize = 1;
pub const MAIN_COLOR: usize = 2;
pub const PATTERN: usize = 3;
pub const PRICE_CLUSTER: usize = 4;
pub const FABRIC_CLUSTER: usize = 5;

pub const DEFAULT_MIN_CLASS_SUPPORT: usize = 50;
pub const DEFAULT_PRICE_CLUSTERS: usize = 28;
pub const DEFAULT_FABRIC_CLUSTERS: usize = 80;

/// One line of the catalog file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commodity_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fibers: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub item_id: String,
    /// Class label per family, `None` where the tag is missing.
    pub tags: [Option<String>; 6],
    pub raw_price: Option<f64>,
    /// Fractions over the catalog's fiber axes, summing to 1.
    pub fiber_composition: Option<Vec<f64>>,
}

impl Item {
    pub fn new(item_id: impl Into<String>) -> Self {
        Item {
            item_id: item_id.into(),
            tags: Default::default(),
            raw_price: None,
            fiber_composition: None,
        }
    }
}

/// Parsed catalog with its fiber axes (sorted fiber names).
#[derive(Debug, Clone)]
pub struct Catalog {
    pub items: Vec<Item>,
    pub fibers: Vec<String>,
}

impl Catalog {
    pub fn from_records(records: Vec<CatalogRecord>) -> Result<Self> {
        let fibers: Vec<String> = records
            .iter()
            .filter_map(|r| r.fibers.as_ref())
            .flat_map(|m| m.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let axis: HashMap<&str, usize> = fibers.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();
        let mut seen = BTreeSet::new();
        let mut items = Vec::with_capacity(records.len());
        for r in records {
            if !seen.insert(r.item_id.clone()) {
                return Err(Error::data(format!("duplicate item_id `{}`", r.item_id)));
            }
            let fiber_composition = match &r.fibers {
                None => None,
                Some(m) if m.is_empty() => None,
                Some(m) => {
                    let mut v = vec![0.0; fibers.len()];
                    for (name, &frac) in m {
                        if !(0.0..=1.0).contains(&frac) {
                            return Err(Error::data(format!(
                                "item `{}`: fiber fraction {frac} for `{name}` outside [0, 1]",
                                r.item_id
                            )));
                        }
                        v[axis[name.as_str()]] = frac;
                    }
                    let sum: f64 = v.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::data(format!(
                            "item `{}`: fiber fractions sum to {sum}, expected 1",
                            r.item_id
                        )));
                    }
                    Some(v)
                }
            };
            let mut item = Item::new(r.item_id);
            item.tags[BRAND] = r.brand;
            item.tags[COMMODITY_GROUP] = r.commodity_group;
            item.tags[MAIN_COLOR] = r.color;
            item.tags[PATTERN] = r.pattern;
            item.raw_price = r.price;
            item.fiber_composition = fiber_composition;
            items.push(item);
        }
        Ok(Catalog { items, fibers })
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CatalogRecord = serde_json::from_str(&line)
                .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), n + 1)))?;
            records.push(rec);
        }
        Self::from_records(records)
    }

    pub fn item_ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.item_id.clone()).collect()
    }
}

pub fn records_to_jsonl(records: &[CatalogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("catalog record serializes"));
        out.push('\n');
    }
    out
}

/// Result of a derived-label clustering.
#[derive(Debug, Clone)]
pub struct Clustering {
    /// Cluster per item (aligned with the input slice); `None` for unlabeled items.
    pub labels: Vec<Option<usize>>,
    /// Items dropped because their raw value was unusable.
    pub excluded: Vec<String>,
    pub kmeans: KMeans,
}

impl Clustering {
    /// Writes the cluster labels into `family` of each item as `<prefix><index>`.
    pub fn apply(&self, items: &mut [Item], family: usize, prefix: &str) {
        for (item, label) in items.iter_mut().zip(&self.labels) {
            item.tags[family] = label.map(|c| format!("{prefix}{c:03}"));
        }
    }
}

/// k-means over ln(price). Cluster indices are ordered by ascending centroid.
/// Items with a non-positive price are excluded and reported.
pub fn cluster_prices(items: &[Item], k: usize, seed: u64) -> Result<Clustering> {
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match item.raw_price {
            Some(p) if p > 0.0 && p.is_finite() => {
                rows.push(i);
                points.push(vec![p.ln()]);
            }
            Some(_) => excluded.push(item.item_id.clone()),
            None => {}
        }
    }
    if points.is_empty() {
        return Err(Error::invalid("no items with a positive price"));
    }
    let mut km = kmeans::kmeans(&points, k, seed, kmeans::DEFAULT_MAX_ITERATIONS)?;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| km.centroids[a][0].total_cmp(&km.centroids[b][0]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    km.centroids = order.iter().map(|&c| km.centroids[c].clone()).collect();
    for a in km.assignments.iter_mut() {
        *a = rank[*a];
    }

    let mut labels = vec![None; items.len()];
    for (&row, &c) in rows.iter().zip(&km.assignments) {
        labels[row] = Some(c);
    }
    Ok(Clustering {
        labels,
        excluded,
        kmeans: km,
    })
}

/// k-means over fiber composition vectors; items without a composition get no label.
pub fn cluster_fabrics(items: &[Item], k: usize, seed: u64) -> Result<Clustering> {
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if let Some(v) = &item.fiber_composition {
            rows.push(i);
            points.push(v.clone());
        }
    }
    if points.is_empty() {
        return Err(Error::invalid("no items with a fiber composition"));
    }
    let km = kmeans::kmeans(&points, k, seed, kmeans::DEFAULT_MAX_ITERATIONS)?;
    let mut labels = vec![None; items.len()];
    for (&row, &c) in rows.iter().zip(&km.assignments) {
        labels[row] = Some(c);
    }
    Ok(Clustering {
        labels,
        excluded: Vec::new(),
        kmeans: km,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagFamily {
    pub name: String,
    /// Retained class labels; the position is the class index.
    pub labels: Vec<String>,
    /// Start of this family's block in the one-hot layout.
    pub offset: usize,
}

impl TagFamily {
    pub fn class_count(&self) -> usize {
        self.labels.len()
    }
}

/// One-hot layout over the six tag families.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeVocabulary {
    families: Vec<TagFamily>,
    min_class_support: usize,
    lookup: Vec<HashMap<String, usize>>,
}

impl AttributeVocabulary {
    fn from_labels(labels: Vec<Vec<String>>, min_class_support: usize) -> Self {
        let mut offset = 0;
        let mut families = Vec::with_capacity(labels.len());
        let mut lookup = Vec::with_capacity(labels.len());
        for (name, labels) in FAMILY_NAMES.iter().zip(labels) {
            lookup.push(labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect());
            let count = labels.len();
            families.push(TagFamily {
                name: name.to_string(),
                labels,
                offset,
            });
            offset += count;
        }
        AttributeVocabulary {
            families,
            min_class_support,
            lookup,
        }
    }

    /// Vocabulary with the given per-family class counts and labels `"0"`, `"1"`, ...
    pub fn from_class_counts(counts: [usize; 6]) -> Self {
        let labels = counts
            .iter()
            .map(|&n| (0..n).map(|i| i.to_string()).collect())
            .collect();
        Self::from_labels(labels, 1)
    }

    pub fn families(&self) -> &[TagFamily] {
        &self.families
    }

    pub fn min_class_support(&self) -> usize {
        self.min_class_support
    }

    pub fn len(&self) -> usize {
        self.families.iter().map(TagFamily::class_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_index(&self, family: usize, label: &str) -> Option<usize> {
        self.lookup[family].get(label).copied()
    }

    /// One-hot encoding; tags absent from the vocabulary encode as a zero block.
    pub fn encode_item(&self, item: &Item) -> SparseVector {
        let mut indices = Vec::with_capacity(6);
        for (f, tag) in item.tags.iter().enumerate() {
            if let Some(c) = tag.as_deref().and_then(|t| self.class_index(f, t)) {
                indices.push(self.families[f].offset + c);
            }
        }
        let values = vec![1.0; indices.len()];
        SparseVector {
            dim: self.len(),
            indices,
            values,
        }
    }

    /// One-hot encoding from class indices.
    pub fn encode_indices(&self, classes: &[Option<usize>; 6]) -> Result<SparseVector> {
        let mut indices = Vec::with_capacity(6);
        for (family, class) in self.families.iter().zip(classes) {
            if let Some(c) = *class {
                if c >= family.class_count() {
                    return Err(Error::invalid(format!(
                        "class index {c} out of range for family `{}` with {} classes",
                        family.name,
                        family.class_count()
                    )));
                }
                indices.push(family.offset + c);
            }
        }
        let values = vec![1.0; indices.len()];
        Ok(SparseVector {
            dim: self.len(),
            indices,
            values,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# fdna attribute vocabulary v1\n");
        out.push_str(&format!("min_class_support\t{}\n", self.min_class_support));
        out.push_str("# family\tlabel\tindex\toffset\n");
        for fam in &self.families {
            for (i, label) in fam.labels.iter().enumerate() {
                out.push_str(&format!("{}\t{}\t{}\t{}\n", fam.name, label, i, fam.offset + i));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::format("vocabulary", m);
        let mut min_support = None;
        let mut labels: Vec<Vec<String>> = vec![Vec::new(); 6];
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols[0] == "min_class_support" && cols.len() == 2 {
                min_support = Some(cols[1].parse().map_err(|_| bad(format!("line {}: bad support", n + 1)))?);
                continue;
            }
            if cols.len() != 4 {
                return Err(bad(format!("line {}: expected 4 columns", n + 1)));
            }
            let f = FAMILY_NAMES
                .iter()
                .position(|&name| name == cols[0])
                .ok_or_else(|| bad(format!("line {}: unknown family `{}`", n + 1, cols[0])))?;
            let idx: usize = cols[2].parse().map_err(|_| bad(format!("line {}: bad index", n + 1)))?;
            if idx != labels[f].len() {
                return Err(bad(format!("line {}: class indices must be consecutive", n + 1)));
            }
            labels[f].push(cols[1].to_string());
        }
        let vocab = Self::from_labels(labels, min_support.ok_or_else(|| bad("missing min_class_support".into()))?);
        // offsets are re-derived; verify the file agreed
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("min_class_support")) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() == 4 {
                let f = FAMILY_NAMES.iter().position(|&n| n == cols[0]).unwrap();
                let expect = vocab.families[f].offset + cols[2].parse::<usize>().unwrap();
                if cols[3] != expect.to_string() {
                    return Err(bad(format!("offset mismatch for `{}`/`{}`", cols[0], cols[1])));
                }
            }
        }
        Ok(vocab)
    }

    pub fn checksum(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

/// Builds the one-hot vocabulary, keeping classes with at least `min_class_support`
/// items. Within a family, classes are indexed by descending frequency, then label.
pub fn build_vocabulary(items: &[Item], min_class_support: usize) -> Result<AttributeVocabulary> {
    if items.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty catalog"));
    }
    let mut labels = Vec::with_capacity(6);
    for f in 0..6 {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for item in items {
            if let Some(tag) = item.tags[f].as_deref() {
                *counts.entry(tag).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_class_support).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        labels.push(kept.into_iter().map(|(l, _)| l.to_string()).collect());
    }
    Ok(AttributeVocabulary::from_labels(labels, min_class_support))
}

/// Uniform random split of `n` items into (train, validation) index lists, both sorted.
pub fn split_items(n: usize, validation_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    split_indices(n, validation_fraction, seed, "items")
}

pub(crate) fn split_indices(
    n: usize,
    validation_fraction: f64,
    seed: u64,
    what: &str,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {validation_fraction} outside (0, 1)"
        )));
    }
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 {what} to split, got {n}")));
    }
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(seed));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}
