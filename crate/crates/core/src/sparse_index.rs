//! Inverted index over learned term weights, with exact term-at-a-time
//! top-k retrieval and a BM25 baseline over the same term-id space.
//!
//! Binary layout (all integers little-endian) written by
//! [`SparseIndex::write_to`]:
//!
//! ```text
//! magic        8 bytes   b"TRSPIDX\0"
//! version      u32       1
//! doc_count    u64
//! term_count   u64       number of weight posting lists
//! docs         doc_count × { id_len u32, id utf-8 bytes, token_count u32 }
//! postings     term_count × { term u32, n u32, n × { doc u32, weight f64 } }
//! tf_count     u64       number of term-frequency lists
//! tfs          tf_count × { term u32, n u32, n × { doc u32, tf u32 } }
//! ```
//!
//! `doc` fields are positions in the `docs` table, which is sorted by id.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::types::{top_k_by_key, ScoredHit, TermWeightVector};

const MAGIC: &[u8; 8] = b"TRSPIDX\0";
const VERSION: u32 = 1;

/// One document's contribution to the sparse index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDoc {
    pub doc_id: String,
    pub weights: TermWeightVector,
    pub token_count: u32,
    /// (term, frequency) pairs; used only by BM25.
    pub term_freqs: Vec<(u32, u32)>,
}

impl SparseDoc {
    /// Derives token count and term frequencies from the raw token sequence.
    pub fn from_tokens(
        doc_id: impl Into<String>,
        weights: TermWeightVector,
        tokens: &[u32],
    ) -> Self {
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for &t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        Self {
            doc_id: doc_id.into(),
            weights,
            token_count: tokens.len() as u32,
            term_freqs: tf.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex {
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<u32, Vec<(u32, f64)>>,
    term_freqs: BTreeMap<u32, Vec<(u32, u32)>>,
}

impl SparseIndex {
    pub fn build(docs: Vec<SparseDoc>) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut seen = HashSet::with_capacity(docs.len());
        for d in &docs {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::DuplicateDoc(d.doc_id.clone()));
            }
        }
        let mut docs = docs;
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

        let mut postings: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        let mut term_freqs: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (n, doc) in docs.into_iter().enumerate() {
            let n = n as u32;
            for (term, w) in doc.weights.iter() {
                if w > 0.0 {
                    postings.entry(term).or_default().push((n, w));
                }
            }
            let mut tfs = doc.term_freqs;
            tfs.sort_unstable();
            tfs.dedup_by_key(|e| e.0);
            for (term, tf) in tfs {
                if tf > 0 {
                    term_freqs.entry(term).or_default().push((n, tf));
                }
            }
            doc_ids.push(doc.doc_id);
            doc_lengths.push(doc.token_count);
        }
        Ok(Self::assemble(doc_ids, doc_lengths, postings, term_freqs))
    }

    fn assemble(
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<u32, Vec<(u32, f64)>>,
        term_freqs: BTreeMap<u32, Vec<(u32, u32)>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len().max(1) as f64;
        Self { doc_ids, doc_lengths, avg_doc_length, postings, term_freqs }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Total number of (term, doc) posting entries.
    pub fn posting_entries(&self) -> usize {
        self.postings.values().map(Vec::len).sum()
    }

    /// Posting list for `term` as (doc id, weight), sorted by doc id.
    pub fn postings(&self, term: u32) -> Vec<(&str, f64)> {
        self.postings
            .get(&term)
            .map(|list| list.iter().map(|&(d, w)| (self.doc_ids[d as usize].as_str(), w)).collect())
            .unwrap_or_default()
    }

    fn doc_number(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|x| x.as_str().cmp(doc_id)).ok()
    }

    /// Term-at-a-time accumulation of query·document weight products.
    /// Documents without a positive-weight overlap are never returned.
    pub fn search(&self, query: &TermWeightVector, k: usize) -> Vec<ScoredHit> {
        let mut acc = vec![0.0f64; self.doc_ids.len()];
        let mut touched: Vec<u32> = Vec::new();
        for (term, wq) in query.iter() {
            if wq <= 0.0 {
                continue;
            }
            if let Some(list) = self.postings.get(&term) {
                for &(d, wp) in list {
                    let slot = &mut acc[d as usize];
                    if *slot == 0.0 {
                        touched.push(d);
                    }
                    *slot += wq * wp;
                }
            }
        }
        let scored =
            touched.into_iter().map(|d| (d as usize, acc[d as usize])).filter(|&(_, s)| s > 0.0);
        top_k_by_key(scored, k)
            .into_iter()
            .map(|(d, s)| ScoredHit::new(self.doc_ids[d].clone(), s))
            .collect()
    }

    /// Exact `s_lex(query, doc)` recomputed from the postings, accumulated in
    /// the same term order as [`SparseIndex::search`]. `None` if the doc is
    /// not indexed.
    pub fn score_doc(&self, query: &TermWeightVector, doc_id: &str) -> Option<f64> {
        let d = self.doc_number(doc_id)? as u32;
        let mut score = 0.0;
        for (term, wq) in query.iter() {
            if wq <= 0.0 {
                continue;
            }
            if let Some(list) = self.postings.get(&term) {
                if let Ok(i) = list.binary_search_by_key(&d, |e| e.0) {
                    score += wq * list[i].1;
                }
            }
        }
        Some(score)
    }

    fn tf(&self, term: u32, doc: u32) -> u32 {
        self.term_freqs
            .get(&term)
            .and_then(|list| list.binary_search_by_key(&doc, |e| e.0).ok().map(|i| list[i].1))
            .unwrap_or(0)
    }

    fn idf(&self, term: u32) -> f64 {
        let df = self.term_freqs.get(&term).map_or(0, Vec::len) as f64;
        let n = self.doc_ids.len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn bm25_doc(&self, terms: &BTreeSet<u32>, doc: u32, p: Bm25Params) -> f64 {
        let len = self.doc_lengths[doc as usize] as f64;
        let norm = p.k1 * (1.0 - p.b + p.b * len / self.avg_doc_length);
        terms
            .iter()
            .map(|&t| {
                let tf = self.tf(t, doc) as f64;
                if tf == 0.0 {
                    0.0
                } else {
                    self.idf(t) * tf * (p.k1 + 1.0) / (tf + norm)
                }
            })
            .sum()
    }

    /// Okapi BM25 with the non-negative `ln(1 + (N − df + 0.5)/(df + 0.5))`
    /// IDF. Repeated query terms count once.
    pub fn bm25_score(&self, q_terms: &[u32], doc_id: &str, params: Bm25Params) -> Result<f64> {
        let doc = self.doc_number(doc_id).ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
        let terms: BTreeSet<u32> = q_terms.iter().copied().collect();
        Ok(self.bm25_doc(&terms, doc as u32, params))
    }

    /// Top-`k` documents by BM25.
    pub fn search_bm25(&self, q_terms: &[u32], k: usize, params: Bm25Params) -> Vec<ScoredHit> {
        let terms: BTreeSet<u32> = q_terms.iter().copied().collect();
        let mut candidates: BTreeSet<u32> = BTreeSet::new();
        for t in &terms {
            if let Some(list) = self.term_freqs.get(t) {
                candidates.extend(list.iter().map(|e| e.0));
            }
        }
        let scored = candidates
            .into_iter()
            .map(|d| (d as usize, self.bm25_doc(&terms, d, params)))
            .filter(|&(_, s)| s > 0.0);
        top_k_by_key(scored, k)
            .into_iter()
            .map(|(d, s)| ScoredHit::new(self.doc_ids[d].clone(), s))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.doc_ids.len() as u64).to_le_bytes())?;
        w.write_all(&(self.postings.len() as u64).to_le_bytes())?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            w.write_all(&len.to_le_bytes())?;
        }
        for (term, list) in &self.postings {
            w.write_all(&term.to_le_bytes())?;
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for (d, wt) in list {
                w.write_all(&d.to_le_bytes())?;
                w.write_all(&wt.to_le_bytes())?;
            }
        }
        w.write_all(&(self.term_freqs.len() as u64).to_le_bytes())?;
        for (term, list) in &self.term_freqs {
            w.write_all(&term.to_le_bytes())?;
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for (d, tf) in list {
                w.write_all(&d.to_le_bytes())?;
                w.write_all(&tf.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = ByteReader { inner: r, offset: 0 };
        let mut magic = [0u8; 8];
        r.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(r.bad("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.bad(format!("unsupported version {version}")));
        }
        let doc_count = r.u64()? as usize;
        let term_count = r.u64()? as usize;
        let mut doc_ids = Vec::with_capacity(doc_count.min(1 << 20));
        let mut doc_lengths = Vec::with_capacity(doc_count.min(1 << 20));
        for _ in 0..doc_count {
            let n = r.u32()? as usize;
            let mut buf = vec![0u8; n];
            r.fill(&mut buf)?;
            let id = String::from_utf8(buf).map_err(|_| r.bad("doc id is not utf-8"))?;
            doc_ids.push(id);
            doc_lengths.push(r.u32()?);
        }
        let check_doc = |r: &ByteReader<R>, d: u32| {
            if (d as usize) < doc_count {
                Ok(d)
            } else {
                Err(r.bad(format!("doc number {d} out of range")))
            }
        };
        let mut postings = BTreeMap::new();
        for _ in 0..term_count {
            let term = r.u32()?;
            let n = r.u32()? as usize;
            let mut list = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let d = r.u32()?;
                let d = check_doc(&r, d)?;
                list.push((d, r.f64()?));
            }
            postings.insert(term, list);
        }
        let tf_count = r.u64()? as usize;
        let mut term_freqs = BTreeMap::new();
        for _ in 0..tf_count {
            let term = r.u32()?;
            let n = r.u32()? as usize;
            let mut list = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let d = r.u32()?;
                let d = check_doc(&r, d)?;
                list.push((d, r.u32()?));
            }
            term_freqs.insert(term, list);
        }
        Ok(Self::assemble(doc_ids, doc_lengths, postings, term_freqs))
    }
}

struct ByteReader<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> ByteReader<R> {
    fn bad(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: 0,
            message: format!("sparse index byte {}: {}", self.offset, msg.into()),
        }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| self.bad("unexpected end of file"))?;
        self.offset += buf.len();
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}
