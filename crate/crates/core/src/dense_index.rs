//! Exact top-k inner-product search over pooled embeddings.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{dot_unchecked, top_k_by_key, DenseEmbedding, ScoredHit};

/// Flat, immutable store of unit vectors. Documents are kept sorted by id so
/// that the internal row index doubles as the tie-break key.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f64>,
}

impl DenseIndex {
    pub fn build(docs: Vec<(String, DenseEmbedding)>) -> Result<Self> {
        let dim = docs.first().ok_or(Error::EmptyInput)?.1.dim();
        let mut seen = HashSet::with_capacity(docs.len());
        for (id, emb) in &docs {
            if emb.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: emb.dim() });
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateDoc(id.clone()));
            }
        }
        let mut docs = docs;
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut ids = Vec::with_capacity(docs.len());
        let mut vectors = Vec::with_capacity(docs.len() * dim);
        for (id, emb) in docs {
            ids.push(id);
            vectors.extend_from_slice(emb.as_slice());
        }
        Ok(Self { dim, ids, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Document ids in ascending order.
    pub fn doc_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, doc_id: &str) -> Option<&[f64]> {
        let i = self.ids.binary_search_by(|x| x.as_str().cmp(doc_id)).ok()?;
        Some(self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.ids.iter().zip(self.vectors.chunks_exact(self.dim)).map(|(id, v)| (id.as_str(), v))
    }

    /// Top-`k` documents by inner product with `query`.
    pub fn search(&self, query: &DenseEmbedding, k: usize) -> Result<Vec<ScoredHit>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: query.dim() });
        }
        let q = query.as_slice();
        let scored =
            self.vectors.chunks_exact(self.dim).enumerate().map(|(i, v)| (i, dot_unchecked(q, v)));
        Ok(top_k_by_key(scored, k)
            .into_iter()
            .map(|(i, s)| ScoredHit::new(self.ids[i].clone(), s))
            .collect())
    }

    /// Runs independent searches in parallel; output order follows `queries`.
    pub fn search_many(&self, queries: &[DenseEmbedding], k: usize) -> Result<Vec<Vec<ScoredHit>>> {
        queries.par_iter().map(|q| self.search(q, k)).collect()
    }
}
