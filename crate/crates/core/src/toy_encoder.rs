//! Deterministic pseudo-encoder.
//!
//! Stands in for a neural text encoder so every retrieval path can run and
//! be tested without model weights. Given a sequence of token ids it
//! produces the same four representations a real encoder would: per-token
//! hidden states, a pooled dense vector, lexical term weights and a
//! multi-vector matrix.
//!
//! # Generator
//!
//! All pseudo-random vectors come from `ChaCha8Rng` (a counter-based stream
//! cipher generator) with standard-normal draws via `rand_distr`:
//!
//! | vector                 | key                                   | stream      |
//! |------------------------|---------------------------------------|-------------|
//! | token vector           | `seed`                                | token id    |
//! | positional vector      | `seed ^ POSITION_DOMAIN`              | position    |
//! | lexical projection `u` | `lexical_projection_seed`             | `LEXICAL_STREAM` |
//!
//! Token and positional vectors are normalized to unit length. The lexical
//! projection is left unnormalized (a plain standard-normal draw), so term
//! weights `ReLU(u · h)` are O(1) regardless of `dim`.
//!
//! Golden files depend on this table; changing it is a breaking change.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::{normalized_vec, DenseEmbedding, MultiVectorEmbedding, TermWeightVector};

const POSITION_DOMAIN: u64 = 0x9E37_79B9_7F4A_7C15;
const LEXICAL_STREAM: u64 = u64::MAX;

/// Default number of tokens covered by each CLS in multi-CLS pooling.
pub const DEFAULT_MCLS_INTERVAL: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoderParams {
    pub dim: usize,
    pub seed: u64,
    pub lexical_projection_seed: u64,
    /// Row-major `dim × dim` projection applied before the multi-vector
    /// normalization. `None` means identity.
    pub multivec_projection: Option<Vec<f64>>,
    /// Weight α of the positional vector in each hidden state, in `[0, 1)`.
    pub positional_blend: f64,
}

impl Default for ToyEncoderParams {
    fn default() -> Self {
        Self {
            dim: 64,
            seed: 0,
            lexical_projection_seed: 1,
            multivec_projection: None,
            positional_blend: 0.25,
        }
    }
}

/// All representations of one text.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText {
    pub cls: DenseEmbedding,
    pub hidden: Vec<Vec<f64>>,
    pub term_weights: TermWeightVector,
    pub multivec: MultiVectorEmbedding,
}

fn gaussian_draw(key: u64, stream: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn unit_draw(key: u64, stream: u64, dim: usize) -> Vec<f64> {
    unit_or_axis(gaussian_draw(key, stream, dim))
}

// A d-dimensional Gaussian draw has zero norm with probability zero; fall
// back to e_0 rather than erroring so that token_vector stays infallible.
fn unit_or_axis(v: Vec<f64>) -> Vec<f64> {
    normalized_vec(&v).unwrap_or_else(|_| {
        let mut e = vec![0.0; v.len()];
        e[0] = 1.0;
        e
    })
}

/// Unit vector for `token_id`; a pure function of `(token_id, seed, dim)`.
pub fn token_vector(token_id: u32, params: &ToyEncoderParams) -> Vec<f64> {
    unit_draw(params.seed, token_id as u64, params.dim)
}

fn position_vector(position: usize, params: &ToyEncoderParams) -> Vec<f64> {
    unit_draw(params.seed ^ POSITION_DOMAIN, position as u64, params.dim)
}

/// Mean of unit vectors, renormalized. A single vector is returned as-is.
fn pool(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    match vectors {
        [] => Err(Error::EmptyInput),
        [only] => Ok(only.clone()),
        _ => {
            let dim = vectors[0].len();
            let mut mean = vec![0.0; dim];
            for v in vectors {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            let n = vectors.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            normalized_vec(&mean)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyEncoder {
    params: ToyEncoderParams,
    lexical_projection: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(params: ToyEncoderParams) -> Result<Self> {
        if params.dim == 0 {
            return Err(Error::InvalidArgument("encoder dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&params.positional_blend) {
            return Err(Error::InvalidArgument(format!(
                "positional_blend {} outside [0, 1)",
                params.positional_blend
            )));
        }
        if let Some(p) = &params.multivec_projection {
            if p.len() != params.dim * params.dim {
                return Err(Error::DimensionMismatch {
                    expected: params.dim * params.dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("multivec_projection"));
            }
        }
        let lexical_projection =
            gaussian_draw(params.lexical_projection_seed, LEXICAL_STREAM, params.dim);
        Ok(Self { params, lexical_projection })
    }

    pub fn params(&self) -> &ToyEncoderParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    /// The `W_lex` surrogate.
    pub fn lexical_projection(&self) -> &[f64] {
        &self.lexical_projection
    }

    /// `u · token_vector(token)`: the position-free part of a term's lexical
    /// weight. Large positive values mean the term is lexically salient.
    pub fn lexical_affinity(&self, token: u32) -> f64 {
        let tv = token_vector(token, &self.params);
        crate::types::dot_unchecked(&self.lexical_projection, &tv)
    }

    /// Hidden state of `token` at `position`.
    pub fn hidden_state(&self, token: u32, position: usize) -> Result<Vec<f64>> {
        let alpha = self.params.positional_blend;
        let tv = token_vector(token, &self.params);
        if alpha == 0.0 {
            return Ok(tv);
        }
        let pv = position_vector(position, &self.params);
        let mixed: Vec<f64> =
            tv.iter().zip(&pv).map(|(t, p)| (1.0 - alpha) * t + alpha * p).collect();
        normalized_vec(&mixed)
    }

    fn hidden_states(&self, tokens: &[u32]) -> Result<Vec<Vec<f64>>> {
        tokens.iter().enumerate().map(|(i, &t)| self.hidden_state(t, i)).collect()
    }

    fn project(&self, h: &[f64]) -> Result<Vec<f64>> {
        match &self.params.multivec_projection {
            None => Ok(h.to_vec()),
            Some(p) => {
                let d = self.params.dim;
                let projected: Vec<f64> = (0..d)
                    .map(|r| crate::types::dot_unchecked(&p[r * d..(r + 1) * d], h))
                    .collect();
                normalized_vec(&projected)
            }
        }
    }

    pub fn encode(&self, tokens: &[u32]) -> Result<EncodedText> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let hidden = self.hidden_states(tokens)?;
        let cls = DenseEmbedding::from_unit(pool(&hidden)?)?;
        let term_weights =
            TermWeightVector::from_pairs(tokens.iter().zip(&hidden).map(|(&t, h)| {
                let w = crate::types::dot_unchecked(&self.lexical_projection, h);
                (t, w.max(0.0))
            }))?;
        let rows = hidden.iter().map(|h| self.project(h)).collect::<Result<Vec<_>>>()?;
        let multivec = MultiVectorEmbedding::from_unit_rows(&rows)?;
        Ok(EncodedText { cls, hidden, term_weights, multivec })
    }

    /// Multi-CLS pooling for long inputs: one CLS per block of `interval`
    /// tokens, then the mean of the block CLS vectors, renormalized.
    pub fn encode_mcls(&self, tokens: &[u32], interval: usize) -> Result<DenseEmbedding> {
        if interval == 0 {
            return Err(Error::InvalidArgument("MCLS interval must be >= 1".into()));
        }
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let hidden = self.hidden_states(tokens)?;
        let block_cls = hidden.chunks(interval).map(pool).collect::<Result<Vec<_>>>()?;
        DenseEmbedding::from_unit(pool(&block_cls)?)
    }
}

/// Parses `id<TAB>tok tok tok` lines.
pub fn parse_token_lines(text: &str) -> Result<Vec<(String, Vec<u32>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "missing tab after document id"))?;
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::parse(i + 1, format!("bad document id `{id}`")));
        }
        let tokens = rest
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| Error::parse(i + 1, format!("bad token `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if tokens.is_empty() {
            return Err(Error::parse(i + 1, format!("document `{id}` has no tokens")));
        }
        out.push((id.to_string(), tokens));
    }
    Ok(out)
}

pub fn format_token_lines(docs: &[(String, Vec<u32>)]) -> String {
    let mut out = String::new();
    for (id, tokens) in docs {
        out.push_str(id);
        out.push('\t');
        let joined: Vec<String> = tokens.iter().map(u32::to_string).collect();
        out.push_str(&joined.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_token_file(path: &std::path::Path) -> Result<Vec<(String, Vec<u32>)>> {
    parse_token_lines(&std::fs::read_to_string(path)?)
}

pub fn write_token_file(docs: &[(String, Vec<u32>)], path: &std::path::Path) -> Result<()> {
    crate::io_util::atomic_write(path, format_token_lines(docs).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{dot, l2_norm};

    fn enc() -> ToyEncoder {
        ToyEncoder::new(ToyEncoderParams::default()).unwrap()
    }

    #[test]
    fn token_vector_is_deterministic_and_unit() {
        let p1 = ToyEncoderParams { seed: 1, ..Default::default() };
        let p2 = ToyEncoderParams { seed: 2, ..Default::default() };
        let a = token_vector(7, &p1);
        assert_eq!(a, token_vector(7, &p1));
        assert!((l2_norm(&a) - 1.0).abs() < 1e-6);
        let b = token_vector(7, &p2);
        assert!(dot(&a, &b).unwrap().abs() < 0.9);
        assert_ne!(a, token_vector(8, &p1));
    }

    #[test]
    fn repeated_terms_keep_max_weight() {
        let e = enc();
        let out = e.encode(&[5, 5]).unwrap();
        let w0 = dot(e.lexical_projection(), &out.hidden[0]).unwrap().max(0.0);
        let w1 = dot(e.lexical_projection(), &out.hidden[1]).unwrap().max(0.0);
        assert_eq!(out.term_weights.len(), 1);
        assert_eq!(out.term_weights.get(5), Some(w0.max(w1)));
    }

    #[test]
    fn single_token_paths_coincide() {
        let out = enc().encode(&[42]).unwrap();
        assert_eq!(out.multivec.row(0), out.hidden[0].as_slice());
        assert_eq!(out.cls.as_slice(), out.hidden[0].as_slice());
    }

    #[test]
    fn order_matters_with_positional_blend() {
        let e = enc();
        let a = e.encode(&[1, 2, 3, 4]).unwrap();
        let b = e.encode(&[4, 3, 2, 1]).unwrap();
        assert_ne!(a.cls, b.cls);
        assert_eq!(a, e.encode(&[1, 2, 3, 4]).unwrap());
    }

    #[test]
    fn representation_shapes() {
        let tokens = [9, 3, 9, 12, 1];
        let out = enc().encode(&tokens).unwrap();
        assert_eq!(out.hidden.len(), tokens.len());
        assert_eq!(out.multivec.n_rows(), tokens.len());
        assert!(out.term_weights.iter().all(|(t, w)| tokens.contains(&t) && w >= 0.0));
        assert_eq!(out.term_weights.len(), 4);
    }

    #[test]
    fn projection_is_applied_to_multivec() {
        let d = 4;
        let mut proj = vec![0.0; d * d];
        // swap first two coordinates
        proj[1] = 1.0;
        proj[d] = 1.0;
        proj[2 * d + 2] = 1.0;
        proj[3 * d + 3] = 1.0;
        let base = ToyEncoder::new(ToyEncoderParams { dim: d, ..Default::default() }).unwrap();
        let swapped = ToyEncoder::new(ToyEncoderParams {
            dim: d,
            multivec_projection: Some(proj),
            ..Default::default()
        })
        .unwrap();
        let a = base.encode(&[3]).unwrap();
        let b = swapped.encode(&[3]).unwrap();
        assert!((a.multivec.row(0)[0] - b.multivec.row(0)[1]).abs() < 1e-12);
        assert!(ToyEncoder::new(ToyEncoderParams {
            dim: d,
            multivec_projection: Some(vec![0.0; 3]),
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn token_file_round_trip() {
        let docs = vec![("a".to_string(), vec![1, 2, 3]), ("b".to_string(), vec![7])];
        let text = format_token_lines(&docs);
        assert_eq!(text, "a\t1 2 3\nb\t7\n");
        assert_eq!(parse_token_lines(&text).unwrap(), docs);
        assert!(matches!(parse_token_lines("a\t1\nb 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_token_lines("a\t1 x\n").is_err());
        assert!(parse_token_lines("a\t\n").is_err());
    }

    #[test]
    fn empty_input_errors() {
        assert_eq!(enc().encode(&[]), Err(Error::EmptyInput));
        assert_eq!(enc().encode_mcls(&[], 4), Err(Error::EmptyInput));
        assert!(matches!(enc().encode_mcls(&[1], 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mcls_single_block_matches_cls() {
        let e = enc();
        let tokens: Vec<u32> = (0..100).collect();
        assert_eq!(e.encode_mcls(&tokens, 256).unwrap(), e.encode(&tokens).unwrap().cls);
    }

    #[test]
    fn mcls_two_blocks_hand_composed() {
        let e = enc();
        let tokens: Vec<u32> = (0..512).map(|i| (i * 7 % 1000) as u32).collect();
        let hidden: Vec<Vec<f64>> =
            tokens.iter().enumerate().map(|(i, &t)| e.hidden_state(t, i).unwrap()).collect();
        let block = |hs: &[Vec<f64>]| {
            let mut m = vec![0.0; e.dim()];
            for h in hs {
                for (a, b) in m.iter_mut().zip(h) {
                    *a += b;
                }
            }
            crate::types::normalize(&m).unwrap().into_vec()
        };
        let b0 = block(&hidden[..256]);
        let b1 = block(&hidden[256..]);
        let expect = block(&[b0, b1]);
        let got = e.encode_mcls(&tokens, 256).unwrap();
        for (g, x) in got.as_slice().iter().zip(&expect) {
            assert!((g - x).abs() < 1e-12);
        }
        assert_ne!(got, e.encode(&tokens).unwrap().cls);
    }
}
