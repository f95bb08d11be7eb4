//! Immutable bit-packed code database with exact linear popcount scan.
//!
//! Index file layout (little-endian):
//!   magic "AIDX" | version u32 | K u32 | N u64 |
//!   label table: count u32, names (u16 len + UTF-8) |
//!   id table: N strings (u16 len + UTF-8) |
//!   labels: u32 x N | packed code words: u64 x N x ceil(K/64), row-major |
//!   FNV-1a64 checksum of all prior bytes, u64.

use std::collections::BinaryHeap;
use std::path::Path;

use crate::binio::{fnv1a64, ByteReader, ByteWriter};
use crate::codec::{hamming_packed, words_for, HashCode};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AIDX";
const VERSION: u32 = 1;

/// One search result: database row plus its Hamming distance to the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub item: usize,
    pub distance: u32,
}

/// Immutable store of packed codes, ids, and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    bits: u32,
    words: usize,
    packed: Vec<u64>,
    ids: Vec<String>,
    labels: Vec<u32>,
    label_table: Vec<String>,
}

impl RetrievalIndex {
    /// Packs codes into the contiguous row-major layout. Ids are opaque and
    /// may repeat.
    pub fn build(
        bits: u32,
        codes: &[HashCode],
        ids: Vec<String>,
        labels: Vec<u32>,
        label_table: Vec<String>,
    ) -> Result<Self> {
        if codes.len() != ids.len() || codes.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} codes, {} ids, {} labels",
                codes.len(),
                ids.len(),
                labels.len()
            )));
        }
        let words = words_for(bits);
        let mut packed = Vec::with_capacity(codes.len() * words);
        for code in codes {
            if code.bits() != bits {
                return Err(Error::BitsMismatch {
                    expected: bits,
                    actual: code.bits(),
                });
            }
            packed.extend_from_slice(code.packed());
        }
        for &l in &labels {
            if l as usize >= label_table.len() {
                return Err(Error::ShapeMismatch(format!(
                    "label {l} outside table of {}",
                    label_table.len()
                )));
            }
        }
        Ok(RetrievalIndex {
            bits,
            words,
            packed,
            ids,
            labels,
            label_table,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, item: usize) -> &str {
        &self.ids[item]
    }

    pub fn label(&self, item: usize) -> u32 {
        self.labels[item]
    }

    pub fn label_name(&self, item: usize) -> &str {
        &self.label_table[self.labels[item] as usize]
    }

    pub fn label_table(&self) -> &[String] {
        &self.label_table
    }

    fn row(&self, item: usize) -> &[u64] {
        &self.packed[item * self.words..(item + 1) * self.words]
    }

    /// Reconstructs the stored code for row `item`.
    pub fn code(&self, item: usize) -> HashCode {
        HashCode::from_packed(self.bits, self.row(item).to_vec())
            .expect("stored rows are always well-formed")
    }

    fn check_query(&self, query: &HashCode) -> Result<()> {
        if query.bits() != self.bits {
            return Err(Error::BitsMismatch {
                expected: self.bits,
                actual: query.bits(),
            });
        }
        Ok(())
    }

    /// Exact k-nearest by Hamming distance via full linear scan. Ordering:
    /// ascending distance, ties by ascending item index. `k` larger than
    /// the database returns everything.
    pub fn search_topk(&self, query: &HashCode, k: usize) -> Result<Vec<Hit>> {
        self.check_query(query)?;
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let q = query.packed();
        // bounded max-heap of the k best (distance, item) pairs
        let mut heap: BinaryHeap<(u32, usize)> = BinaryHeap::with_capacity(k + 1);
        for item in 0..self.len() {
            let d = hamming_packed(self.row(item), q);
            if heap.len() < k {
                heap.push((d, item));
            } else if let Some(&worst) = heap.peek() {
                if (d, item) < worst {
                    heap.pop();
                    heap.push((d, item));
                }
            }
        }
        let mut hits: Vec<Hit> = heap
            .into_iter()
            .map(|(distance, item)| Hit { item, distance })
            .collect();
        hits.sort_unstable_by_key(|h| (h.distance, h.item));
        Ok(hits)
    }

    /// All items within Hamming radius `r`, same ordering as `search_topk`.
    pub fn search_radius(&self, query: &HashCode, r: u32) -> Result<Vec<Hit>> {
        self.check_query(query)?;
        let q = query.packed();
        let mut hits: Vec<Hit> = (0..self.len())
            .filter_map(|item| {
                let d = hamming_packed(self.row(item), q);
                (d <= r).then_some(Hit { item, distance: d })
            })
            .collect();
        hits.sort_unstable_by_key(|h| (h.distance, h.item));
        Ok(hits)
    }

    /// Distances from the query to every row, in row order.
    pub fn scan_distances(&self, query: &HashCode) -> Result<Vec<u32>> {
        self.check_query(query)?;
        let q = query.packed();
        Ok((0..self.len()).map(|i| hamming_packed(self.row(i), q)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::new();
        w.magic(MAGIC);
        w.u32(VERSION);
        w.u32(self.bits);
        w.u64(self.len() as u64);
        w.u32(self.label_table.len() as u32);
        for name in &self.label_table {
            w.str16(name);
        }
        for id in &self.ids {
            w.str16(id);
        }
        for &l in &self.labels {
            w.u32(l);
        }
        for &word in &self.packed {
            w.u64(word);
        }
        let checksum = fnv1a64(w.bytes());
        w.u64(checksum);
        std::fs::write(path, w.into_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 8 {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                detail: "shorter than a checksum".to_string(),
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a64(body) != stored {
            return Err(Error::ChecksumMismatch {
                path: path.to_path_buf(),
            });
        }
        let mut r = ByteReader::new(body, path);
        r.expect_magic(MAGIC)?;
        r.expect_version(VERSION)?;
        let bits = r.u32("bits")?;
        let n = r.u64("item count")? as usize;
        let n_labels = r.u32("label count")? as usize;
        let mut label_table = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            label_table.push(r.str16("label name")?);
        }
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(r.str16("item id")?);
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let l = r.u32("item label")?;
            if l as usize >= label_table.len() {
                return Err(Error::Corrupt {
                    path: path.to_path_buf(),
                    detail: format!("label {l} outside table"),
                });
            }
            labels.push(l);
        }
        let words = words_for(bits);
        let packed = r.u64_slice(n * words, "packed codes")?;
        r.expect_end()?;
        Ok(RetrievalIndex {
            bits,
            words,
            packed,
            ids,
            labels,
            label_table,
        })
    }
}

/// Reference scan used to cross-check the packed implementation: counts
/// sign mismatches element-wise and sorts with the same tie rule.
pub fn naive_topk(codes: &[HashCode], query: &HashCode, k: usize) -> Vec<Hit> {
    let mut hits: Vec<Hit> = codes
        .iter()
        .enumerate()
        .map(|(item, c)| {
            let distance = c
                .signs()
                .iter()
                .zip(query.signs())
                .filter(|(a, b)| *a != b)
                .count() as u32;
            Hit { item, distance }
        })
        .collect();
    hits.sort_by_key(|h| (h.distance, h.item));
    hits.truncate(k);
    hits
}
