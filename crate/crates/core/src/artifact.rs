//! Binary artifact container shared by models, customer banks and planted worlds.
//!
//! Layout (all text lines are UTF-8, terminated by `\n`):
//!
//! ```text
//! FDNA <kind> v1
//! <key> <value>          zero or more metadata lines, keys may repeat
//! blob <name> <len>      one line per blob, len counted in f64 values
//! data
//! <raw bytes>            every blob in declaration order, f64 little-endian, row-major
//! sha256 <hex>           digest of every byte before this line
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub kind: String,
    meta: Vec<(String, String)>,
    blobs: Vec<(String, Vec<f64>)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl Artifact {
    pub fn new(kind: impl Into<String>) -> Self {
        Artifact {
            kind: kind.into(),
            meta: Vec::new(),
            blobs: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        debug_assert!(!key.contains(char::is_whitespace) && !value.contains('\n'));
        self.meta.push((key.to_string(), value));
    }

    pub fn push_blob(&mut self, name: &str, data: Vec<f64>) {
        self.blobs.push((name.to_string(), data));
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::format(&self.kind, format!("missing header key `{key}`")))
    }

    pub fn meta_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.meta
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::format(&self.kind, format!("bad value `{raw}` for `{key}`")))
    }

    pub fn blob(&self, name: &str) -> Result<&[f64]> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| Error::format(&self.kind, format!("missing blob `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("FDNA {} {VERSION}\n", self.kind).into_bytes();
        for (k, v) in &self.meta {
            out.extend_from_slice(format!("{k} {v}\n").as_bytes());
        }
        for (name, data) in &self.blobs {
            out.extend_from_slice(format!("blob {name} {}\n", data.len()).as_bytes());
        }
        out.extend_from_slice(b"data\n");
        for (_, data) in &self.blobs {
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = sha256_hex(&out);
        out.extend_from_slice(format!("\nsha256 {digest}\n").as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_kind: &str) -> Result<Self> {
        let what = expected_kind.to_string();
        let bad = |m: &str| Error::format(&what, m.to_string());

        // checksum trailer: "\nsha256 " + 64 hex + "\n"
        const TRAILER: usize = 1 + 7 + 64 + 1;
        if bytes.len() < TRAILER {
            return Err(bad("truncated file"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - TRAILER);
        let trailer = std::str::from_utf8(trailer).map_err(|_| bad("bad checksum line"))?;
        let stored = trailer
            .strip_prefix("\nsha256 ")
            .and_then(|s| s.strip_suffix('\n'))
            .ok_or_else(|| bad("missing checksum line"))?;
        let actual = sha256_hex(body);
        if stored != actual {
            return Err(bad(&format!("checksum mismatch: stored {stored}, computed {actual}")));
        }

        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<&str> {
            let rest = &body[*pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header"))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))?;
            *pos += end + 1;
            Ok(line)
        };

        let first = next_line(&mut pos)?;
        let mut parts = first.split(' ');
        if parts.next() != Some("FDNA") {
            return Err(bad("missing FDNA magic"));
        }
        let kind = parts.next().ok_or_else(|| bad("missing kind"))?.to_string();
        if kind != expected_kind {
            return Err(bad(&format!("expected kind `{expected_kind}`, found `{kind}`")));
        }
        if parts.next() != Some(VERSION) {
            return Err(bad("unsupported version"));
        }

        let mut art = Artifact::new(kind);
        let mut lens = Vec::new();
        loop {
            let line = next_line(&mut pos)?;
            if line == "data" {
                break;
            }
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            if key == "blob" {
                let (name, len) = value.split_once(' ').ok_or_else(|| bad("bad blob line"))?;
                let len: usize = len.parse().map_err(|_| bad("bad blob length"))?;
                lens.push((name.to_string(), len));
            } else {
                art.meta.push((key.to_string(), value.to_string()));
            }
        }
        let total: usize = lens.iter().map(|(_, l)| l * 8).sum();
        if body.len() - pos != total {
            return Err(bad(&format!(
                "payload has {} bytes, header declares {total}",
                body.len() - pos
            )));
        }
        for (name, len) in lens {
            let data = body[pos..pos + len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            pos += len * 8;
            art.blobs.push((name, data));
        }
        Ok(art)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path, expected_kind: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_kind)
    }
}
