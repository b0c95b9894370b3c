//! Per-document token matrices and late-interaction reranking of a
//! candidate set. Multi-vector scoring is never used for first-stage
//! retrieval.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::scoring::s_mul;
use crate::types::{rank_cmp, MultiVectorEmbedding, ScoredHit};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultiVecStore {
    dim: Option<usize>,
    entries: BTreeMap<String, MultiVectorEmbedding>,
}

impl MultiVecStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_doc(&mut self, doc_id: impl Into<String>, mv: MultiVectorEmbedding) -> Result<()> {
        let doc_id = doc_id.into();
        if let Some(dim) = self.dim {
            if mv.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: mv.dim() });
            }
        }
        if self.entries.contains_key(&doc_id) {
            return Err(Error::DuplicateDoc(doc_id));
        }
        self.dim = Some(mv.dim());
        self.entries.insert(doc_id, mv);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&MultiVectorEmbedding> {
        self.entries.get(doc_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &MultiVectorEmbedding)> + '_ {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Scores every candidate by late interaction against `query` and keeps
    /// the best `top_n`. Duplicate candidate ids are scored once.
    pub fn rerank(
        &self,
        query: &MultiVectorEmbedding,
        candidates: &[String],
        top_n: usize,
    ) -> Result<Vec<ScoredHit>> {
        let mut seen = HashSet::with_capacity(candidates.len());
        let mut hits = Vec::with_capacity(candidates.len());
        for c in candidates {
            if !seen.insert(c.as_str()) {
                continue;
            }
            let doc = self.get(c).ok_or_else(|| Error::UnknownDoc(c.clone()))?;
            hits.push(ScoredHit::new(c.clone(), s_mul(query, doc)?));
        }
        hits.sort_by(rank_cmp);
        hits.truncate(top_n);
        Ok(hits)
    }
}
