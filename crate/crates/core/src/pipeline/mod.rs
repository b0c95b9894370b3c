//! Hybrid retrieval: per-method first-stage search, a rerank pool, and
//! fused rescoring with exact recomputation of every component score.

mod embeddings;

pub use embeddings::{
    encode_records, manifest_path, parse_records, read_embeddings, write_embeddings,
    EmbeddingRecord, Manifest,
};

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;

use crate::dense_index::DenseIndex;
use crate::error::{Error, Result};
use crate::multivec::MultiVecStore;
use crate::scoring::{s_mul, weighted_score};
use crate::sparse_index::SparseIndex;
use crate::types::{
    dot_unchecked, rank_cmp, Components, DenseEmbedding, FusionWeights, MultiVectorEmbedding,
    ScoredHit, TermWeightVector,
};

/// Which candidates are rescored by the fused score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankPool {
    /// The first `n` dense hits.
    DenseTop(usize),
    /// Union of dense top-`dense_k` and sparse top-`sparse_k`.
    UnionDenseSparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Methods {
    pub dense: bool,
    pub sparse: bool,
    pub multivec: bool,
}

impl Methods {
    pub const ALL: Self = Self { dense: true, sparse: true, multivec: true };
    pub const DENSE_SPARSE: Self = Self { dense: true, sparse: true, multivec: false };
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridConfig {
    pub weights: FusionWeights,
    pub dense_k: usize,
    pub sparse_k: usize,
    pub pool: RerankPool,
    pub methods: Methods,
}

pub const PRESET_NAMES: [&str; 4] = ["miracl_all", "miracl_ds", "mldr_ds", "mldr_all"];

impl HybridConfig {
    /// Named weight/pool presets. `*_ds` presets rerank the union of dense
    /// and sparse top-1000; `*_all` presets rerank the dense top-200.
    pub fn preset(name: &str) -> Option<Self> {
        let (weights, all) = match name {
            "miracl_all" => (FusionWeights::MIRACL_ALL, true),
            "miracl_ds" => (FusionWeights::MIRACL_DS, false),
            "mldr_ds" => (FusionWeights::MLDR_DS, false),
            "mldr_all" => (FusionWeights::MLDR_ALL, true),
            _ => return None,
        };
        Some(if all {
            Self {
                weights,
                dense_k: 1000,
                sparse_k: 1000,
                pool: RerankPool::DenseTop(200),
                methods: Methods::ALL,
            }
        } else {
            Self {
                weights,
                dense_k: 1000,
                sparse_k: 1000,
                pool: RerankPool::UnionDenseSparse,
                methods: Methods::DENSE_SPARSE,
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        for (enabled, weight, name) in [
            (self.methods.dense, w.dense, "dense"),
            (self.methods.sparse, w.lex, "sparse"),
            (self.methods.multivec, w.mul, "multivec"),
        ] {
            if !enabled && weight != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} is disabled but has nonzero weight {weight}"
                )));
            }
        }
        match self.pool {
            RerankPool::DenseTop(n) => {
                if !self.methods.dense {
                    return Err(Error::InvalidArgument(
                        "dense_top pool needs dense enabled".into(),
                    ));
                }
                if n > self.dense_k {
                    return Err(Error::InvalidArgument(format!(
                        "rerank_n {n} exceeds dense_k {}",
                        self.dense_k
                    )));
                }
            }
            RerankPool::UnionDenseSparse => {
                if !self.methods.dense && !self.methods.sparse {
                    return Err(Error::InvalidArgument(
                        "union pool needs dense or sparse enabled".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Query representations, converted once from an [`EmbeddingRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub dense: Option<DenseEmbedding>,
    pub sparse: Option<TermWeightVector>,
    pub multivec: Option<MultiVectorEmbedding>,
}

impl Query {
    pub fn from_record(rec: &EmbeddingRecord) -> Result<Self> {
        Ok(Self {
            id: rec.id.clone(),
            dense: rec.dense_embedding()?,
            sparse: rec.term_weights()?,
            multivec: rec.multivec()?,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Indexes<'a> {
    pub dense: Option<&'a DenseIndex>,
    pub sparse: Option<&'a SparseIndex>,
    pub multivec: Option<&'a MultiVecStore>,
}

fn need<'a, T>(x: Option<&'a T>, what: &'static str) -> Result<&'a T> {
    x.ok_or(Error::MissingRepresentation(what))
}

fn missing_index(what: &str) -> Error {
    Error::InvalidArgument(format!("{what} index required by the config is not loaded"))
}

/// Builds the candidate pool (sorted, de-duplicated doc ids).
pub fn rerank_pool(
    query: &Query,
    indexes: &Indexes<'_>,
    cfg: &HybridConfig,
) -> Result<Vec<String>> {
    let mut pool: BTreeSet<String> = BTreeSet::new();
    let dense_hits = if cfg.methods.dense {
        let q = need(query.dense.as_ref(), "dense")?;
        let idx = indexes.dense.ok_or_else(|| missing_index("dense"))?;
        idx.search(q, cfg.dense_k)?
    } else {
        Vec::new()
    };
    match cfg.pool {
        RerankPool::DenseTop(n) => {
            pool.extend(dense_hits.into_iter().take(n).map(|h| h.doc_id));
        }
        RerankPool::UnionDenseSparse => {
            pool.extend(dense_hits.into_iter().map(|h| h.doc_id));
            if cfg.methods.sparse {
                let q = need(query.sparse.as_ref(), "sparse")?;
                let idx = indexes.sparse.ok_or_else(|| missing_index("sparse"))?;
                pool.extend(idx.search(q, cfg.sparse_k).into_iter().map(|h| h.doc_id));
            }
        }
    }
    Ok(pool.into_iter().collect())
}

/// Exact per-method scores of one pooled document. Disabled methods score 0.
pub fn component_scores(
    query: &Query,
    doc_id: &str,
    indexes: &Indexes<'_>,
    methods: Methods,
) -> Result<Components> {
    let dense = if methods.dense {
        let q = need(query.dense.as_ref(), "dense")?;
        let idx = indexes.dense.ok_or_else(|| missing_index("dense"))?;
        let v = idx.vector(doc_id).ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
        if v.len() != q.dim() {
            return Err(Error::DimensionMismatch { expected: v.len(), got: q.dim() });
        }
        dot_unchecked(q.as_slice(), v)
    } else {
        0.0
    };
    let lex = if methods.sparse {
        let q = need(query.sparse.as_ref(), "sparse")?;
        let idx = indexes.sparse.ok_or_else(|| missing_index("sparse"))?;
        // A doc present in the dense index but absent from the sparse one
        // simply has no lexical overlap.
        idx.score_doc(q, doc_id).unwrap_or(0.0)
    } else {
        0.0
    };
    let mul = if methods.multivec {
        let q = need(query.multivec.as_ref(), "multivec")?;
        let store = indexes.multivec.ok_or_else(|| missing_index("multivec"))?;
        let p = store.get(doc_id).ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
        s_mul(q, p)?
    } else {
        0.0
    };
    Ok(Components { dense, lex, mul })
}

/// Runs the hybrid protocol for one query and returns the fused top-`k`.
pub fn retrieve_hybrid(
    query: &Query,
    indexes: &Indexes<'_>,
    cfg: &HybridConfig,
    k: usize,
) -> Result<Vec<ScoredHit>> {
    cfg.validate()?;
    let pool = rerank_pool(query, indexes, cfg)?;
    let mut hits = pool
        .into_iter()
        .map(|doc_id| {
            let c = component_scores(query, &doc_id, indexes, cfg.methods)?;
            let score = weighted_score(c.dense, c.lex, c.mul, &cfg.weights)?;
            Ok(ScoredHit { doc_id, score, components: Some(c) })
        })
        .collect::<Result<Vec<_>>>()?;
    hits.sort_by(rank_cmp);
    hits.truncate(k);
    Ok(hits)
}

/// [`retrieve_hybrid`] over many queries in parallel.
pub fn retrieve_hybrid_many(
    queries: &[Query],
    indexes: &Indexes<'_>,
    cfg: &HybridConfig,
    k: usize,
) -> Result<Vec<Vec<ScoredHit>>> {
    queries.par_iter().map(|q| retrieve_hybrid(q, indexes, cfg, k)).collect()
}

/// Top-ranked dense hits that are not positives, at most `n` of them.
pub fn mine_hard_negatives(
    query: &DenseEmbedding,
    positives: &HashSet<String>,
    index: &DenseIndex,
    n: usize,
) -> Result<Vec<String>> {
    let hits = index.search(query, n.saturating_add(positives.len()))?;
    Ok(hits.into_iter().map(|h| h.doc_id).filter(|id| !positives.contains(id)).take(n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_index::SparseDoc;
    use crate::types::{is_rank_sorted, normalize};

    fn e(v: &[f64]) -> DenseEmbedding {
        normalize(v).unwrap()
    }

    #[test]
    fn presets_resolve_and_validate() {
        for name in PRESET_NAMES {
            HybridConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(HybridConfig::preset("nope").is_none());
        let mut cfg = HybridConfig::preset("miracl_all").unwrap();
        cfg.methods.multivec = false;
        assert!(cfg.validate().is_err());
        let mut cfg = HybridConfig::preset("miracl_all").unwrap();
        cfg.pool = RerankPool::DenseTop(5000);
        assert!(cfg.validate().is_err());
        assert_eq!(HybridConfig::preset("mldr_all").unwrap().weights, FusionWeights::MLDR_ALL);
    }

    #[test]
    fn missing_representation_is_named() {
        let dense = DenseIndex::build(vec![("a".into(), e(&[1.0, 0.0]))]).unwrap();
        let q = Query { id: "q".into(), dense: None, sparse: None, multivec: None };
        let idx = Indexes { dense: Some(&dense), ..Default::default() };
        let cfg = HybridConfig {
            weights: FusionWeights::new(1.0, 0.0, 0.0).unwrap(),
            dense_k: 10,
            sparse_k: 10,
            pool: RerankPool::DenseTop(10),
            methods: Methods { dense: true, sparse: false, multivec: false },
        };
        assert_eq!(retrieve_hybrid(&q, &idx, &cfg, 5), Err(Error::MissingRepresentation("dense")));
    }

    #[test]
    fn union_pool_fuses_docs_found_by_one_method() {
        let dense = DenseIndex::build(vec![
            ("a".into(), e(&[1.0, 0.0])),
            ("b".into(), e(&[0.0, 1.0])),
            ("c".into(), e(&[-1.0, 0.0])),
        ])
        .unwrap();
        let tw = |p: &[(u32, f64)]| TermWeightVector::from_pairs(p.iter().copied()).unwrap();
        let sparse = SparseIndex::build(vec![
            SparseDoc::from_tokens("a", tw(&[(1, 0.1)]), &[1]),
            SparseDoc::from_tokens("b", tw(&[]), &[2]),
            SparseDoc::from_tokens("c", tw(&[(5, 2.0)]), &[5]),
        ])
        .unwrap();
        let q = Query {
            id: "q".into(),
            dense: Some(e(&[1.0, 0.2])),
            sparse: Some(tw(&[(5, 1.0), (1, 1.0)])),
            multivec: None,
        };
        let idx = Indexes { dense: Some(&dense), sparse: Some(&sparse), multivec: None };
        let cfg = HybridConfig {
            weights: FusionWeights::MIRACL_DS,
            dense_k: 1,
            sparse_k: 1,
            pool: RerankPool::UnionDenseSparse,
            methods: Methods::DENSE_SPARSE,
        };
        // dense top-1 = a, sparse top-1 = c
        let hits = retrieve_hybrid(&q, &idx, &cfg, 10).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!(is_rank_sorted(&hits));
        for h in &hits {
            let c = h.components.unwrap();
            let fused = cfg.weights.dense * c.dense + cfg.weights.lex * c.lex;
            assert!((h.score - fused).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_negatives_skip_positives() {
        let idx = DenseIndex::build(vec![
            ("P".into(), e(&[1.0, 0.0, 0.0])),
            ("A".into(), e(&[0.9, 0.1, 0.0])),
            ("B".into(), e(&[0.5, 0.5, 0.0])),
        ])
        .unwrap();
        let q = e(&[1.0, 0.0, 0.0]);
        let pos: HashSet<String> = ["P".to_string()].into();
        assert_eq!(mine_hard_negatives(&q, &pos, &idx, 5).unwrap(), ["A", "B"]);
        assert_eq!(mine_hard_negatives(&q, &pos, &idx, 1).unwrap(), ["A"]);
        let all: HashSet<String> = ["P", "A", "B"].iter().map(|s| s.to_string()).collect();
        assert!(mine_hard_negatives(&q, &all, &idx, 5).unwrap().is_empty());
    }
}
