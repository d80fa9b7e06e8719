//! Sparse boolean purchase matrix and the item/customer quadrant split.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Boolean item × customer matrix, stored item-major (CSR keyed by item).
#[derive(Debug, Clone, PartialEq)]
pub struct PurchaseMatrix {
    item_ids: Vec<String>,
    customer_ids: Vec<String>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub records: usize,
    pub duplicates: usize,
    pub entries: usize,
}

impl PurchaseMatrix {
    /// Builds from (item, customer) index pairs; repeated pairs collapse to one entry.
    pub fn from_pairs(
        item_ids: Vec<String>,
        customer_ids: Vec<String>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, LoadReport)> {
        if customer_ids.len() > u32::MAX as usize {
            return Err(Error::invalid("too many customers"));
        }
        let (n, k) = (item_ids.len(), customer_ids.len());
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut records = 0;
        for (i, j) in pairs {
            if i >= n || j >= k {
                return Err(Error::data(format!("pair ({i}, {j}) outside a {n} x {k} matrix")));
            }
            rows[i].push(j as u32);
            records += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(&r);
            row_ptr.push(cols.len());
        }
        let entries = cols.len();
        Ok((
            PurchaseMatrix {
                item_ids,
                customer_ids,
                row_ptr,
                cols,
            },
            LoadReport {
                records,
                duplicates: records - entries,
                entries,
            },
        ))
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_customers(&self) -> usize {
        self.customer_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn customer_ids(&self) -> &[String] {
        &self.customer_ids
    }

    /// Sorted customer indices who bought item `i`.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn contains(&self, item: usize, customer: usize) -> bool {
        self.row(item).binary_search(&(customer as u32)).is_ok()
    }

    pub fn item_counts(&self) -> Vec<usize> {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn customer_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_customers()];
        for &j in &self.cols {
            c[j as usize] += 1;
        }
        c
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n_items() as f64 * self.n_customers() as f64)
    }

    pub fn item_index(&self) -> HashMap<&str, usize> {
        self.item_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn customer_index(&self) -> HashMap<&str, usize> {
        self.customer_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    /// `customer_id,item_id` lines with a header, item-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("customer_id,item_id\n");
        for i in 0..self.n_items() {
            for &j in self.row(i) {
                out.push_str(&self.customer_ids[j as usize]);
                out.push(',');
                out.push_str(&self.item_ids[i]);
                out.push('\n');
            }
        }
        out
    }
}

fn parse_line(line: &str, n: usize) -> Result<Option<(&str, &str)>> {
    let line = line.trim();
    if line.is_empty() || line == "customer_id,item_id" {
        return Ok(None);
    }
    line.split_once(',')
        .map(|(c, i)| Some((c.trim(), i.trim())))
        .ok_or_else(|| Error::data(format!("line {n}: expected `customer_id,item_id`, got `{line}`")))
}

/// Reads `customer_id,item_id` lines against fixed item and customer orders.
pub fn load_purchases(
    reader: impl BufRead,
    item_ids: &[String],
    customer_ids: &[String],
) -> Result<(PurchaseMatrix, LoadReport)> {
    let items: HashMap<&str, usize> = item_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let customers: HashMap<&str, usize> =
        customer_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::data(format!("line {}: {e}", n + 1)))?;
        let Some((c, i)) = parse_line(&line, n + 1)? else { continue };
        let item = *items
            .get(i)
            .ok_or_else(|| Error::data(format!("line {}: unknown item `{i}` in record `{line}`", n + 1)))?;
        let customer = *customers
            .get(c)
            .ok_or_else(|| Error::data(format!("line {}: unknown customer `{c}` in record `{line}`", n + 1)))?;
        pairs.push((item, customer));
    }
    PurchaseMatrix::from_pairs(item_ids.to_vec(), customer_ids.to_vec(), pairs)
}

/// Sorted distinct customer ids appearing in a purchases stream.
pub fn customer_order(reader: impl BufRead) -> Result<Vec<String>> {
    let mut ids = std::collections::BTreeSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::data(format!("line {}: {e}", n + 1)))?;
        if let Some((c, _)) = parse_line(&line, n + 1)? {
            ids.insert(c.to_string());
        }
    }
    Ok(ids.into_iter().collect())
}

/// One of the four blocks of the purchase matrix. The first letter names the
/// item set, the second the customer set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quadrant {
    TT,
    TV,
    VT,
    VV,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::TT, Quadrant::TV, Quadrant::VT, Quadrant::VV];

    pub fn training_items(self) -> bool {
        matches!(self, Quadrant::TT | Quadrant::TV)
    }

    pub fn training_customers(self) -> bool {
        matches!(self, Quadrant::TT | Quadrant::VT)
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrant::TT => "tt",
            Quadrant::TV => "tv",
            Quadrant::VT => "vt",
            Quadrant::VV => "vv",
        })
    }
}

impl FromStr for Quadrant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tt" => Ok(Quadrant::TT),
            "tv" => Ok(Quadrant::TV),
            "vt" => Ok(Quadrant::VT),
            "vv" => Ok(Quadrant::VV),
            _ => Err(Error::invalid(format!("unknown quadrant `{s}` (expected tt, tv, vt or vv)"))),
        }
    }
}

/// Disjoint train/validation index sets on both axes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadrantSplit {
    pub item_train: Vec<usize>,
    pub item_val: Vec<usize>,
    pub customer_train: Vec<usize>,
    pub customer_val: Vec<usize>,
    item_is_train: Vec<bool>,
    customer_is_train: Vec<bool>,
}

fn check_partition(train: &[usize], val: &[usize], n: usize, what: &str) -> Result<Vec<bool>> {
    let mut seen = vec![None; n];
    for (set, flag) in [(train, true), (val, false)] {
        for &i in set {
            if i >= n {
                return Err(Error::invalid(format!("{what} index {i} out of range {n}")));
            }
            if seen[i].replace(flag).is_some() {
                return Err(Error::invalid(format!("{what} index {i} assigned twice")));
            }
        }
    }
    seen.into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::invalid(format!("{what} index {i} unassigned"))))
        .collect()
}

impl QuadrantSplit {
    pub fn new(
        n_items: usize,
        n_customers: usize,
        mut item_train: Vec<usize>,
        mut item_val: Vec<usize>,
        mut customer_train: Vec<usize>,
        mut customer_val: Vec<usize>,
    ) -> Result<Self> {
        for v in [&mut item_train, &mut item_val, &mut customer_train, &mut customer_val] {
            v.sort_unstable();
        }
        let item_is_train = check_partition(&item_train, &item_val, n_items, "item")?;
        let customer_is_train = check_partition(&customer_train, &customer_val, n_customers, "customer")?;
        Ok(QuadrantSplit {
            item_train,
            item_val,
            customer_train,
            customer_val,
            item_is_train,
            customer_is_train,
        })
    }

    pub fn items(&self, q: Quadrant) -> &[usize] {
        if q.training_items() {
            &self.item_train
        } else {
            &self.item_val
        }
    }

    pub fn customers(&self, q: Quadrant) -> &[usize] {
        if q.training_customers() {
            &self.customer_train
        } else {
            &self.customer_val
        }
    }

    pub fn is_train_item(&self, i: usize) -> bool {
        self.item_is_train[i]
    }

    pub fn is_train_customer(&self, j: usize) -> bool {
        self.customer_is_train[j]
    }

    pub fn quadrant_of(&self, item: usize, customer: usize) -> Quadrant {
        match (self.item_is_train[item], self.customer_is_train[customer]) {
            (true, true) => Quadrant::TT,
            (true, false) => Quadrant::TV,
            (false, true) => Quadrant::VT,
            (false, false) => Quadrant::VV,
        }
    }

    pub fn view<'a>(&'a self, matrix: &'a PurchaseMatrix, quadrant: Quadrant) -> QuadrantView<'a> {
        QuadrantView {
            matrix,
            split: self,
            quadrant,
        }
    }
}

/// Read-only restriction of the matrix to one quadrant.
#[derive(Debug, Clone, Copy)]
pub struct QuadrantView<'a> {
    pub matrix: &'a PurchaseMatrix,
    pub split: &'a QuadrantSplit,
    pub quadrant: Quadrant,
}

impl<'a> QuadrantView<'a> {
    pub fn items(&self) -> &'a [usize] {
        self.split.items(self.quadrant)
    }

    pub fn customers(&self) -> &'a [usize] {
        self.split.customers(self.quadrant)
    }

    /// Customers of this quadrant who bought `item`.
    pub fn row(&self, item: usize) -> impl Iterator<Item = usize> + 'a {
        let want = self.quadrant.training_customers();
        let split = self.split;
        self.matrix
            .row(item)
            .iter()
            .map(|&j| j as usize)
            .filter(move |&j| split.customer_is_train[j] == want)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + 'a {
        let view = *self;
        self.items().iter().flat_map(move |&i| view.row(i).map(move |j| (i, j)))
    }

    pub fn nnz(&self) -> usize {
        self.items().iter().map(|&i| self.row(i).count()).sum()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.items().len() as f64 * self.customers().len() as f64)
    }

    /// Purchases per quadrant customer, aligned with `customers()`.
    pub fn customer_counts(&self) -> Vec<usize> {
        let all = self.matrix.n_customers();
        let mut counts = vec![0usize; all];
        for (_, j) in self.entries() {
            counts[j] += 1;
        }
        self.customers().iter().map(|&j| counts[j]).collect()
    }
}

const STRATA: usize = 10;

/// Splits customers into (train, validation) so that purchase-count distributions
/// match: customers are ranked by count, cut into deciles, and each decile
/// contributes its share of validation customers by systematic sampling with a
/// seeded phase. Equal counts are ordered by a seeded shuffle.
pub fn split_customers(
    matrix: &PurchaseMatrix,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    split_by_counts(&matrix.customer_counts(), validation_fraction, seed)
}

pub fn split_by_counts(counts: &[usize], validation_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {validation_fraction} outside (0, 1)"
        )));
    }
    let k = counts.len();
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 customers to split, got {k}")));
    }
    let mut rng = rng::rng(seed);
    let tiebreak: Vec<u64> = (0..k).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&j| (counts[j], tiebreak[j], j));

    let n_val = ((k as f64 * validation_fraction).round() as usize).clamp(1, k - 1);
    let strata = STRATA.min(k);
    let bounds: Vec<usize> = (0..=strata).map(|s| s * k / strata).collect();

    // largest-remainder quotas so that the total is exactly n_val
    let exact: Vec<f64> = bounds
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 * n_val as f64 / k as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..strata).collect();
    rest.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n_val - quota.iter().sum::<usize>();
    for &s in rest.iter().take(missing) {
        quota[s] += 1;
    }

    let mut is_val = vec![false; k];
    for (s, w) in bounds.windows(2).enumerate() {
        let size = w[1] - w[0];
        let q = quota[s];
        if q == 0 {
            continue;
        }
        let phase: f64 = rng.random();
        for t in 0..q {
            let pos = (((t as f64 + phase) * size as f64 / q as f64).floor() as usize).min(size - 1);
            is_val[order[w[0] + pos]] = true;
        }
    }
    rebalance(counts, &order, &bounds, &mut is_val, n_val);
    let (val, train): (Vec<usize>, Vec<usize>) = (0..k).partition(|&j| is_val[j]);
    Ok((train, val))
}

/// Swaps validation and training customers while that moves the validation
/// count total closer to its proportional share. Swaps stay within a stratum
/// when possible and fall back to neighbouring strata.
fn rebalance(counts: &[usize], order: &[usize], bounds: &[usize], is_val: &mut [bool], n_val: usize) {
    let k = counts.len();
    let strata = bounds.len() - 1;
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let target = total * n_val as f64 / k as f64;
    let mut val_sum: f64 = (0..k).filter(|&j| is_val[j]).map(|j| counts[j] as f64).sum();
    for _ in 0..n_val.max(1) * 4 {
        let gap = val_sum - target;
        if gap.abs() < 0.5 {
            break;
        }
        let mut chosen = None;
        for reach in [0, 1] {
            let mut best: Option<(f64, usize, usize)> = None;
            for s in 0..strata {
                let lo = bounds[s.saturating_sub(reach)];
                let hi = bounds[(s + 1 + reach).min(strata)];
                let train: Vec<usize> = order[lo..hi].iter().copied().filter(|&j| !is_val[j]).collect();
                if train.is_empty() {
                    continue;
                }
                for &a in order[bounds[s]..bounds[s + 1]].iter().filter(|&&j| is_val[j]) {
                    // best b has counts[b] - counts[a] closest to -gap
                    let want = counts[a] as f64 - gap;
                    let at = train.partition_point(|&b| (counts[b] as f64) < want);
                    for idx in [at.wrapping_sub(1), at] {
                        if let Some(&b) = train.get(idx) {
                            let after = (gap + counts[b] as f64 - counts[a] as f64).abs();
                            if best.is_none_or(|(d, _, _)| after < d) {
                                best = Some((after, a, b));
                            }
                        }
                    }
                }
            }
            if let Some((after, a, b)) = best {
                if after < gap.abs() - 1e-9 {
                    chosen = Some((a, b));
                    break;
                }
            }
        }
        let Some((a, b)) = chosen else { break };
        is_val[a] = false;
        is_val[b] = true;
        val_sum += counts[b] as f64 - counts[a] as f64;
    }
}

/// Records the split so downstream runs can reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub item_seed: u64,
    pub customer_seed: u64,
    pub item_validation_fraction: f64,
    pub customer_validation_fraction: f64,
    pub item_train: Vec<String>,
    pub item_val: Vec<String>,
    pub customer_train: Vec<String>,
    pub customer_val: Vec<String>,
}

impl SplitManifest {
    pub fn from_split(
        split: &QuadrantSplit,
        matrix: &PurchaseMatrix,
        item_seed: u64,
        customer_seed: u64,
        item_validation_fraction: f64,
        customer_validation_fraction: f64,
    ) -> Self {
        let ids = |v: &[usize], names: &[String]| v.iter().map(|&i| names[i].clone()).collect();
        SplitManifest {
            item_seed,
            customer_seed,
            item_validation_fraction,
            customer_validation_fraction,
            item_train: ids(&split.item_train, matrix.item_ids()),
            item_val: ids(&split.item_val, matrix.item_ids()),
            customer_train: ids(&split.customer_train, matrix.customer_ids()),
            customer_val: ids(&split.customer_val, matrix.customer_ids()),
        }
    }

    pub fn to_split(&self, matrix: &PurchaseMatrix) -> Result<QuadrantSplit> {
        let items = matrix.item_index();
        let customers = matrix.customer_index();
        let map = |ids: &[String], index: &HashMap<&str, usize>, what: &str| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::data(format!("split manifest names unknown {what} `{id}`")))
                })
                .collect()
        };
        QuadrantSplit::new(
            matrix.n_items(),
            matrix.n_customers(),
            map(&self.item_train, &items, "item")?,
            map(&self.item_val, &items, "item")?,
            map(&self.customer_train, &customers, "customer")?,
            map(&self.customer_val, &customers, "customer")?,
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# fdna split manifest v1\n");
        out.push_str(&format!("item_seed {}\n", self.item_seed));
        out.push_str(&format!("customer_seed {}\n", self.customer_seed));
        out.push_str(&format!("item_validation_fraction {}\n", self.item_validation_fraction));
        out.push_str(&format!("customer_validation_fraction {}\n", self.customer_validation_fraction));
        for (name, ids) in [
            ("item_train", &self.item_train),
            ("item_val", &self.item_val),
            ("customer_train", &self.customer_train),
            ("customer_val", &self.customer_val),
        ] {
            out.push_str(&format!("[{name}] {}\n", ids.len()));
            for id in ids {
                out.push_str(id);
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::format("split manifest", m);
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let mut scalar = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}`")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key}`, got `{line}`")))
        };
        let item_seed = scalar("item_seed")?.parse().map_err(|_| bad("bad item_seed".into()))?;
        let customer_seed = scalar("customer_seed")?.parse().map_err(|_| bad("bad customer_seed".into()))?;
        let ivf = scalar("item_validation_fraction")?.parse().map_err(|_| bad("bad fraction".into()))?;
        let cvf = scalar("customer_validation_fraction")?.parse().map_err(|_| bad("bad fraction".into()))?;
        let mut sections = Vec::new();
        for name in ["item_train", "item_val", "customer_train", "customer_val"] {
            let head = lines.next().ok_or_else(|| bad(format!("missing section {name}")))?;
            let count: usize = head
                .strip_prefix(&format!("[{name}] "))
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad(format!("bad section header `{head}`")))?;
            let ids: Vec<String> = (&mut lines).take(count).map(str::to_string).collect();
            if ids.len() != count {
                return Err(bad(format!("section {name} truncated")));
            }
            sections.push(ids);
        }
        let mut s = sections.into_iter();
        Ok(SplitManifest {
            item_seed,
            customer_seed,
            item_validation_fraction: ivf,
            customer_validation_fraction: cvf,
            item_train: s.next().unwrap(),
            item_val: s.next().unwrap(),
            customer_train: s.next().unwrap(),
            customer_val: s.next().unwrap(),
        })
    }
}
