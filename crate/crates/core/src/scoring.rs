//! The three relevance functions and their weighted fusion.

use crate::error::{Error, Result};
use crate::types::{
    dot, dot_unchecked, DenseEmbedding, FusionWeights, MultiVectorEmbedding, TermWeightVector,
};

/// Inner product of two pooled embeddings.
pub fn s_dense(q: &DenseEmbedding, p: &DenseEmbedding) -> Result<f64> {
    dot(q.as_slice(), p.as_slice())
}

/// Sum of weight products over the terms shared by `q` and `p`.
pub fn s_lex(q: &TermWeightVector, p: &TermWeightVector) -> f64 {
    let (small, large) = if q.len() <= p.len() { (q, p) } else { (p, q) };
    small.iter().filter_map(|(t, w)| large.get(t).map(|v| w * v)).sum()
}

/// Late interaction: mean over query rows of the best-matching passage row.
pub fn s_mul(q: &MultiVectorEmbedding, p: &MultiVectorEmbedding) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), got: p.dim() });
    }
    let total: f64 = q
        .rows()
        .map(|qr| p.rows().map(|pr| dot_unchecked(qr, pr)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / q.n_rows() as f64)
}

/// `w.dense·s_d + w.lex·s_l + w.mul·s_m`.
pub fn weighted_score(s_d: f64, s_l: f64, s_m: f64, w: &FusionWeights) -> Result<f64> {
    if !(s_d.is_finite() && s_l.is_finite() && s_m.is_finite()) {
        return Err(Error::NonFinite("component score"));
    }
    Ok(w.dense * s_d + w.lex * s_l + w.mul * s_m)
}
