//! Cosine geometry over fDNA and exact nearest-neighbour retrieval.
//!
//! Embedding store file layout (all integers little-endian):
//!
//! | offset          | size      | content                                  |
//! |-----------------|-----------|------------------------------------------|
//! | 0               | 8         | magic `FDNAEMB1`                         |
//! | 8               | 8         | `count` (u64)                            |
//! | 16              | 8         | `dim` (u64)                              |
//! | 24              | 8·count·dim | vectors, row-major f64                 |
//! | 24 + 8·count·dim | variable | `count` ids, each u32 byte length + UTF-8 |
//! | end − 32        | 32        | SHA-256 of every preceding byte          |

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::artifact::write_atomic;
use crate::error::{check_dim, Error, Result};

const MAGIC: &[u8; 8] = b"FDNAEMB1";

/// `1 − f·g / (|f| |g|)`.
pub fn cosine_distance(f: &[f64], g: &[f64]) -> Result<f64> {
    check_dim("cosine distance", f.len(), g.len())?;
    let ff: f64 = f.iter().map(|x| x * x).sum();
    let gg: f64 = g.iter().map(|x| x * x).sum();
    if ff == 0.0 || gg == 0.0 {
        return Err(Error::invalid("cosine distance of a zero vector"));
    }
    let fg: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
    Ok(distance_from_parts(fg, ff, gg))
}

fn distance_from_parts(fg: f64, ff: f64, gg: f64) -> f64 {
    let prod = ff * gg;
    let denom = if prod.is_finite() && prod > 0.0 { prod.sqrt() } else { ff.sqrt() * gg.sqrt() };
    1.0 - (fg / denom).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("embedding store", ids.len() * dim, data.len())?;
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate id {id:?} in embedding store")));
            }
        }
        Ok(EmbeddingStore { ids, dim, data, index })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        check_dim("embedding rows", ids.len(), rows.len())?;
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_dim("embedding row", dim, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(ids, dim, data)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    /// Restricts to the given ids, in that order.
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            data.extend_from_slice(self.get(id).ok_or_else(|| Error::data(format!("unknown item {id:?}")))?);
        }
        Self::new(ids.to_vec(), self.dim, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.data.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("embedding store", m);
        if bytes.len() < 24 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("missing FDNAEMB1 header"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let word = |at: usize| u64::from_le_bytes(body[at..at + 8].try_into().unwrap()) as usize;
        let (count, dim) = (word(8), word(16));
        let floats = count.checked_mul(dim).ok_or_else(|| bad("size overflow"))?;
        let mut pos = 24usize.checked_add(floats.checked_mul(8).ok_or_else(|| bad("size overflow"))?).ok_or_else(|| bad("size overflow"))?;
        if pos > body.len() {
            return Err(bad("truncated vectors"));
        }
        let data = body[24..pos]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            if pos + 4 > body.len() {
                return Err(bad("truncated id table"));
            }
            let len = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if pos + len > body.len() {
                return Err(bad("truncated id table"));
            }
            ids.push(String::from_utf8(body[pos..pos + len].to_vec()).map_err(|_| bad("id is not UTF-8"))?);
            pos += len;
        }
        if pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Self::new(ids, dim, data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResult {
    pub query: String,
    /// (item id, cosine distance), nearest first.
    pub neighbors: Vec<(String, f64)>,
}

impl NeighborResult {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (rank, (id, d)) in self.neighbors.iter().enumerate() {
            writeln!(out, "{}\t{}\t{id}\t{d:.12}", self.query, rank + 1).unwrap();
        }
        out
    }
}

const SHARD: usize = 4096;

/// Exact `k` nearest items to `query` by cosine distance, ties broken by id.
/// The query itself and zero vectors are excluded.
pub fn nearest_neighbors(store: &EmbeddingStore, query: &str, k: usize) -> Result<NeighborResult> {
    let q = store
        .index_of(query)
        .ok_or_else(|| Error::invalid(format!("item {query:?} not in embedding store")))?;
    if k == 0 || k >= store.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..{} for a store of {} items",
            store.len(),
            store.len()
        )));
    }
    let f = store.row(q);
    let ff: f64 = f.iter().map(|x| x * x).sum();
    if ff == 0.0 {
        return Err(Error::invalid(format!("item {query:?} has a zero embedding")));
    }
    let mut candidates: Vec<(f64, usize)> = (0..store.len())
        .collect::<Vec<_>>()
        .par_chunks(SHARD)
        .flat_map_iter(|shard| {
            shard.iter().filter_map(|&i| {
                if i == q {
                    return None;
                }
                let g = store.row(i);
                let gg: f64 = g.iter().map(|x| x * x).sum();
                if gg == 0.0 {
                    return None;
                }
                let fg: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
                Some((distance_from_parts(fg, ff, gg), i))
            })
        })
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then_with(|| store.ids[a.1].cmp(&store.ids[b.1]));
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, by_distance);
        candidates.truncate(k);
    }
    candidates.sort_by(by_distance);
    Ok(NeighborResult {
        query: query.to_string(),
        neighbors: candidates.into_iter().map(|(d, i)| (store.ids[i].clone(), d)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(rows: &[(&str, Vec<f64>)]) -> EmbeddingStore {
        EmbeddingStore::from_rows(
            rows.iter().map(|r| r.0.to_string()).collect(),
            &rows.iter().map(|r| r.1.clone()).collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(cosine_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 1.0);
        let d = cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert!((d - 0.292893).abs() < 1e-6);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_distance(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn hand_ordered_neighbours() {
        let s = store(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![1.0, 1.0]),
            ("c", vec![0.0, 1.0]),
            ("d", vec![2.0, 0.1]),
        ]);
        // from a: d = 1 - 2/sqrt(4.01), b = 1 - 1/sqrt 2, c = 1
        let r = nearest_neighbors(&s, "a", 3).unwrap();
        let order: Vec<&str> = r.neighbors.iter().map(|n| n.0.as_str()).collect();
        assert_eq!(order, ["d", "b", "c"]);
        assert!((r.neighbors[0].1 - (1.0 - 2.0 / 4.01f64.sqrt())).abs() < 1e-15);
        assert_eq!(r.neighbors[2].1, 1.0);
    }

    #[test]
    fn duplicate_vector_ranks_first_and_ties_go_by_id() {
        let s = store(&[
            ("q", vec![1.0, 2.0]),
            ("z", vec![2.0, 4.0]),
            ("y", vec![1.0, 2.0]),
            ("x", vec![2.0, 1.0]),
        ]);
        let r = nearest_neighbors(&s, "q", 2).unwrap();
        assert_eq!(r.neighbors, vec![("y".to_string(), 0.0), ("z".to_string(), 0.0)]);
    }

    #[test]
    fn two_item_store() {
        let s = store(&[("a", vec![1.0]), ("b", vec![3.0])]);
        assert_eq!(nearest_neighbors(&s, "a", 1).unwrap().neighbors[0].0, "b");
        assert!(nearest_neighbors(&s, "a", 2).is_err());
        assert!(nearest_neighbors(&s, "missing", 1).is_err());
    }

    #[test]
    fn store_round_trips_and_detects_corruption() {
        let s = store(&[("a", vec![1.0, -0.0]), ("béta", vec![f64::MIN_POSITIVE, 3.5])]);
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..8], b"FDNAEMB1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1.0);
        let back = EmbeddingStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let mut broken = bytes.clone();
        broken[30] ^= 1;
        assert!(EmbeddingStore::from_bytes(&broken).is_err());
    }

    #[test]
    fn neighbour_tsv_rows() {
        let s = store(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![1.0, 1.0])]);
        let tsv = nearest_neighbors(&s, "a", 1).unwrap().to_tsv();
        assert_eq!(tsv, format!("a\t1\tc\t{:.12}\n", 1.0 - 1.0 / 2f64.sqrt()));
    }

    fn nonneg(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, d)
    }

    proptest! {
        #[test]
        fn distance_properties((f, g) in (1usize..16).prop_flat_map(|d| (nonneg(d), nonneg(d))), a in 1e-3f64..1e3) {
            prop_assume!(f.iter().any(|&x| x > 0.0) && g.iter().any(|&x| x > 0.0));
            let d = cosine_distance(&f, &g).unwrap();
            prop_assert_eq!(d, cosine_distance(&g, &f).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(cosine_distance(&f, &f).unwrap(), 0.0);
            let scaled: Vec<f64> = f.iter().map(|x| a * x).collect();
            prop_assert!((cosine_distance(&scaled, &g).unwrap() - d).abs() < 1e-12);
        }

        #[test]
        fn scan_equals_brute_force(rows in prop::collection::vec(nonneg(4), 3..40), k in 1usize..5, q in 0usize..40) {
            let ids: Vec<String> = (0..rows.len()).map(|i| format!("i{i:02}")).collect();
            let s = EmbeddingStore::from_rows(ids.clone(), &rows).unwrap();
            let q = q % rows.len();
            prop_assume!(rows[q].iter().any(|&x| x > 0.0) && k < rows.len());
            let got = nearest_neighbors(&s, &ids[q], k).unwrap();
            let mut all: Vec<(f64, String)> = (0..rows.len())
                .filter(|&i| i != q && rows[i].iter().any(|&x| x > 0.0))
                .map(|i| (cosine_distance(&rows[q], &rows[i]).unwrap(), ids[i].clone()))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.truncate(k);
            let expect: Vec<(String, f64)> = all.into_iter().map(|(d, i)| (i, d)).collect();
            prop_assert_eq!(got.neighbors, expect);
        }
    }
}
