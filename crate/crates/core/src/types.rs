//! Shared numeric primitives and the domain types consumed by every index,
//! scorer and pipeline stage.
//!
//! All similarity math is done in `f64`. Vectors handed to constructors are
//! validated once; after construction every type is immutable.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating that a vector is unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Scales `v` to unit Euclidean norm.
pub fn normalize(v: &[f64]) -> Result<DenseEmbedding> {
    Ok(DenseEmbedding(normalized_vec(v)?))
}

pub(crate) fn normalized_vec(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateVector);
    }
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Inner product of two equal-length vectors.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-norm single-vector embedding (the pooled representation of a text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseEmbedding(Vec<f64>);

impl DenseEmbedding {
    /// Wraps a vector that is already unit-norm, checking the invariant.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateVector);
        }
        if (l2_norm(&values) - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::DegenerateVector);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Sparse term-id → weight map. Entries are kept sorted by term id, each
/// term appears once, and every weight is finite and non-negative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermWeightVector {
    entries: Vec<(u32, f64)>,
}

impl TermWeightVector {
    /// Builds a vector from (term, weight) pairs. Repeated terms keep their
    /// maximum weight.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let mut entries: Vec<(u32, f64)> = Vec::new();
        for (term, weight) in pairs {
            if !weight.is_finite() || weight < 0.0 {
                return Err(Error::InvalidWeight { term, weight });
            }
            entries.push((term, weight));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
        entries.dedup_by_key(|e| e.0);
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Weight of `term`, or `None` when the term is absent.
    pub fn get(&self, term: u32) -> Option<f64> {
        self.entries.binary_search_by_key(&term, |e| e.0).ok().map(|i| self.entries[i].1)
    }

    /// Entries in ascending term order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn nonzero_count(&self) -> usize {
        self.entries.iter().filter(|e| e.1 > 0.0).count()
    }
}

/// Row-normalized token embedding matrix (N rows × d columns, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiVectorEmbedding {
    dim: usize,
    data: Vec<f64>,
}

impl MultiVectorEmbedding {
    /// Normalizes every row of `rows`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().ok_or(Error::EmptyInput)?.len();
        if dim == 0 {
            return Err(Error::DegenerateVector);
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            data.extend(normalized_vec(row)?);
        }
        Ok(Self { dim, data })
    }

    /// Builds from rows that are already unit-norm, checking each row.
    pub fn from_unit_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().ok_or(Error::EmptyInput)?.len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            if row.iter().any(|x| !x.is_finite()) || (l2_norm(row) - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::DegenerateVector);
            }
            data.extend_from_slice(row);
        }
        if dim == 0 {
            return Err(Error::DegenerateVector);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Per-method weights of the fused score `w_dense·s_dense + w_lex·s_lex + w_mul·s_mul`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub dense: f64,
    pub lex: f64,
    pub mul: f64,
}

impl FusionWeights {
    pub fn new(dense: f64, lex: f64, mul: f64) -> Result<Self> {
        if ![dense, lex, mul].iter().all(|w| w.is_finite()) {
            return Err(Error::InvalidWeights("weights must be finite".into()));
        }
        if dense == 0.0 && lex == 0.0 && mul == 0.0 {
            return Err(Error::InvalidWeights("at least one weight must be nonzero".into()));
        }
        Ok(Self { dense, lex, mul })
    }

    /// Dense + sparse fusion used for short-passage retrieval: (1, 0.3, 0).
    pub const MIRACL_DS: Self = Self { dense: 1.0, lex: 0.3, mul: 0.0 };
    /// All three methods for short-passage retrieval: (1, 0.3, 1).
    pub const MIRACL_ALL: Self = Self { dense: 1.0, lex: 0.3, mul: 1.0 };
    /// Dense + sparse fusion for long documents: (0.2, 0.8, 0).
    pub const MLDR_DS: Self = Self { dense: 0.2, lex: 0.8, mul: 0.0 };
    /// All three methods for long documents: (0.15, 0.5, 0.35).
    pub const MLDR_ALL: Self = Self { dense: 0.15, lex: 0.5, mul: 0.35 };

    pub fn as_array(&self) -> [f64; 3] {
        [self.dense, self.lex, self.mul]
    }
}

/// Per-method component scores attached to a fused hit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub dense: f64,
    pub lex: f64,
    pub mul: f64,
}

/// A ranked result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub doc_id: String,
    pub score: f64,
    pub components: Option<Components>,
}

impl ScoredHit {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        Self { doc_id: doc_id.into(), score, components: None }
    }
}

/// Result-list order: score descending, then doc id ascending.
pub fn rank_cmp(a: &ScoredHit, b: &ScoredHit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

pub fn sort_hits(hits: &mut [ScoredHit]) {
    hits.sort_by(rank_cmp);
}

/// True when `hits` satisfies the result-list ordering contract.
pub fn is_rank_sorted(hits: &[ScoredHit]) -> bool {
    hits.windows(2).all(|w| rank_cmp(&w[0], &w[1]) != Ordering::Greater)
}

// Heap entry whose `Ord` puts the worst-ranked candidate on top.
struct Worst {
    score: f64,
    key: usize,
}

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then_with(|| self.key.cmp(&other.key))
    }
}

/// Selects the best `k` (key, score) pairs ordered by score descending and
/// key ascending. Keys must be ordered consistently with doc ids for the
/// tie rule to match [`rank_cmp`].
pub fn top_k_by_key<I>(scored: I, k: usize) -> Vec<(usize, f64)>
where
    I: IntoIterator<Item = (usize, f64)>,
{
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
    for (key, score) in scored {
        let cand = Worst { score, key };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(top) = heap.peek() {
            if cand < *top {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|w| (w.key, w.score)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!((v.as_slice()[0] - 0.6).abs() < 1e-12);
        assert!((v.as_slice()[1] - 0.8).abs() < 1e-12);
        let v = normalize(&[1.0, 1.0]).unwrap();
        assert!((v.as_slice()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(normalize(&[0.0, 0.0]), Err(Error::DegenerateVector));
        assert_eq!(normalize(&[1.0, f64::NAN]), Err(Error::DegenerateVector));
        assert_eq!(normalize(&[]), Err(Error::DegenerateVector));
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((dot(&[0.6, 0.8], &[0.8, 0.6]).unwrap() - 0.96).abs() < 1e-12);
        assert!(matches!(
            dot(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn term_weights_keep_max_and_reject_negative() {
        let tw = TermWeightVector::from_pairs([(5, 0.30), (5, 0.12), (2, 0.5)]).unwrap();
        assert_eq!(tw.len(), 2);
        assert_eq!(tw.get(5), Some(0.30));
        assert_eq!(tw.iter().next(), Some((2, 0.5)));
        assert!(TermWeightVector::from_pairs([(1, -0.1)]).is_err());
    }

    #[test]
    fn fusion_weights_validation() {
        assert!(FusionWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(FusionWeights::new(f64::INFINITY, 0.0, 0.0).is_err());
        assert!(FusionWeights::new(0.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn top_k_ties_break_by_key() {
        let got = top_k_by_key(vec![(3, 0.5), (1, 0.5), (2, 0.9), (0, 0.1)], 3);
        assert_eq!(got, vec![(2, 0.9), (1, 0.5), (3, 0.5)]);
        assert!(top_k_by_key(vec![(0, 1.0)], 0).is_empty());
    }

    #[test]
    fn multivec_rows_are_normalized() {
        let mv = MultiVectorEmbedding::from_rows(&[vec![3.0, 4.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(mv.n_rows(), 2);
        assert_eq!(mv.row(1), &[0.0, 1.0]);
        assert!(MultiVectorEmbedding::from_unit_rows(&[vec![3.0, 4.0]]).is_err());
        assert!(MultiVectorEmbedding::from_rows(&[]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 1..32)) {
            prop_assume!(l2_norm(&v) > 1e-6);
            let once = normalize(&v).unwrap();
            let twice = normalize(once.as_slice()).unwrap();
            prop_assert!((l2_norm(once.as_slice()) - 1.0).abs() < 1e-6);
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }

        #[test]
        fn dot_is_symmetric_and_bilinear(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            b in proptest::collection::vec(-10.0f64..10.0, 8),
            c in proptest::collection::vec(-10.0f64..10.0, 8),
            alpha in -5.0f64..5.0,
        ) {
            prop_assert!((dot(&a, &b).unwrap() - dot(&b, &a).unwrap()).abs() < 1e-9);
            let lhs: Vec<f64> = a.iter().zip(&c).map(|(x, z)| alpha * x + z).collect();
            let expect = alpha * dot(&a, &b).unwrap() + dot(&c, &b).unwrap();
            prop_assert!((dot(&lhs, &b).unwrap() - expect).abs() < 1e-9);
        }

        #[test]
        fn top_k_matches_full_sort(scores in proptest::collection::vec(-3i32..3, 0..40), k in 1usize..50) {
            let items: Vec<(usize, f64)> = scores.iter().enumerate().map(|(i, s)| (i, *s as f64)).collect();
            let mut full = items.clone();
            full.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            full.truncate(k);
            prop_assert_eq!(top_k_by_key(items, k), full);
        }
    }
}
