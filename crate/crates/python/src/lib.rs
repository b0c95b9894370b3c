//! Python bindings: toy encoder, the three scorers, exact indexes, hybrid
//! retrieval, IR metrics, distillation losses and length-grouped batching.
//!
//! Vectors cross the boundary as lists of floats, term weights as
//! `{term_id: weight}` dicts and hit lists as `(doc_id, score)` tuples.

// The pyfunction macro expands `?` into conversions clippy flags as useless.
#![allow(clippy::useless_conversion)]

use std::collections::{BTreeMap, HashMap};

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tri_retrieve::batching::{
    assign_groups, padding_stats, plan_epoch, plan_lengths, LengthGroupTable, TrainingStage,
};
use tri_retrieve::dense_index::DenseIndex;
use tri_retrieve::distill::{self, CandidateScores, LossWeights};
use tri_retrieve::evalkit::{self, Qrels, RunFile};
use tri_retrieve::multivec::MultiVecStore;
use tri_retrieve::pipeline::{retrieve_hybrid, HybridConfig, Indexes, Query};
use tri_retrieve::sparse_index::{Bm25Params, SparseDoc, SparseIndex};
use tri_retrieve::toy_encoder::{EncodedText, ToyEncoder, ToyEncoderParams};
use tri_retrieve::{
    normalize, scoring, FusionWeights, MultiVectorEmbedding, ScoredHit, TermWeightVector,
};

fn err(e: tri_retrieve::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.name()))
}

fn weights_of(map: &HashMap<u32, f64>) -> PyResult<TermWeightVector> {
    TermWeightVector::from_pairs(map.iter().map(|(&t, &w)| (t, w))).map_err(err)
}

fn hits_out(hits: Vec<ScoredHit>) -> Vec<(String, f64)> {
    hits.into_iter().map(|h| (h.doc_id, h.score)).collect()
}

fn encoded_dict<'py>(py: Python<'py>, enc: &EncodedText) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("dense", enc.cls.as_slice().to_vec())?;
    let sparse: BTreeMap<u32, f64> = enc.term_weights.iter().collect();
    d.set_item("sparse", sparse)?;
    d.set_item("colbert", enc.multivec.to_rows())?;
    Ok(d)
}

/// Deterministic hash-seeded encoder producing all three representations.
#[pyclass(name = "ToyEncoder")]
struct PyToyEncoder {
    inner: ToyEncoder,
}

#[pymethods]
impl PyToyEncoder {
    #[new]
    #[pyo3(signature = (dim=64, seed=0, lexical_seed=None))]
    fn new(dim: usize, seed: u64, lexical_seed: Option<u64>) -> PyResult<Self> {
        let params = ToyEncoderParams {
            dim,
            seed,
            lexical_projection_seed: lexical_seed.unwrap_or(seed.wrapping_add(1)),
            ..ToyEncoderParams::default()
        };
        Ok(Self { inner: ToyEncoder::new(params).map_err(err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `{"dense": [...], "sparse": {term: w}, "colbert": [[...], ...]}`.
    fn encode<'py>(&self, py: Python<'py>, tokens: Vec<u32>) -> PyResult<Bound<'py, PyDict>> {
        encoded_dict(py, &self.inner.encode(&tokens).map_err(err)?)
    }

    #[pyo3(signature = (tokens, interval=256))]
    fn encode_mcls(&self, tokens: Vec<u32>, interval: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.encode_mcls(&tokens, interval).map_err(err)?.into_vec())
    }
}

#[pyfunction]
fn s_dense(q: Vec<f64>, p: Vec<f64>) -> PyResult<f64> {
    let q = normalize(&q).map_err(err)?;
    let p = normalize(&p).map_err(err)?;
    scoring::s_dense(&q, &p).map_err(err)
}

#[pyfunction]
fn s_lex(q: HashMap<u32, f64>, p: HashMap<u32, f64>) -> PyResult<f64> {
    Ok(scoring::s_lex(&weights_of(&q)?, &weights_of(&p)?))
}

#[pyfunction]
fn s_mul(q: Vec<Vec<f64>>, p: Vec<Vec<f64>>) -> PyResult<f64> {
    let q = MultiVectorEmbedding::from_rows(&q).map_err(err)?;
    let p = MultiVectorEmbedding::from_rows(&p).map_err(err)?;
    scoring::s_mul(&q, &p).map_err(err)
}

#[pyfunction]
fn weighted_score(s_d: f64, s_l: f64, s_m: f64, weights: (f64, f64, f64)) -> PyResult<f64> {
    let w = FusionWeights::new(weights.0, weights.1, weights.2).map_err(err)?;
    scoring::weighted_score(s_d, s_l, s_m, &w).map_err(err)
}

/// Exact inner-product index over normalized vectors.
#[pyclass(name = "DenseIndex")]
struct PyDenseIndex {
    inner: DenseIndex,
}

#[pymethods]
impl PyDenseIndex {
    #[new]
    fn new(docs: Vec<(String, Vec<f64>)>) -> PyResult<Self> {
        let docs = docs
            .into_iter()
            .map(|(id, v)| Ok((id, normalize(&v).map_err(err)?)))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: DenseIndex::build(docs).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn search(&self, query: Vec<f64>, k: usize) -> PyResult<Vec<(String, f64)>> {
        let q = normalize(&query).map_err(err)?;
        Ok(hits_out(self.inner.search(&q, k).map_err(err)?))
    }
}

/// Inverted index for learned term weights, also serving BM25.
#[pyclass(name = "SparseIndex")]
struct PySparseIndex {
    inner: SparseIndex,
}

#[pymethods]
impl PySparseIndex {
    /// `docs` holds `(doc_id, {term: weight}, tokens)`; tokens feed BM25.
    #[new]
    fn new(docs: Vec<(String, HashMap<u32, f64>, Vec<u32>)>) -> PyResult<Self> {
        let docs = docs
            .into_iter()
            .map(|(id, w, tokens)| Ok(SparseDoc::from_tokens(id, weights_of(&w)?, &tokens)))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: SparseIndex::build(docs).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.doc_count()
    }

    fn search(&self, query: HashMap<u32, f64>, k: usize) -> PyResult<Vec<(String, f64)>> {
        Ok(hits_out(self.inner.search(&weights_of(&query)?, k)))
    }

    #[pyo3(signature = (terms, k, k1=1.2, b=0.75))]
    fn search_bm25(&self, terms: Vec<u32>, k: usize, k1: f64, b: f64) -> Vec<(String, f64)> {
        hits_out(self.inner.search_bm25(&terms, k, Bm25Params { k1, b }))
    }
}

/// `(doc_id, fused, s_dense, s_lex, s_mul)`.
type FusedHit = (String, f64, f64, f64, f64);

/// Encodes a token corpus once and answers fused hybrid queries over it.
#[pyclass(name = "HybridRetriever")]
struct PyHybridRetriever {
    encoder: ToyEncoder,
    dense: DenseIndex,
    sparse: SparseIndex,
    multivec: MultiVecStore,
}

#[pymethods]
impl PyHybridRetriever {
    #[new]
    fn new(encoder: &PyToyEncoder, docs: Vec<(String, Vec<u32>)>) -> PyResult<Self> {
        let encoder = encoder.inner.clone();
        let mut dense = Vec::with_capacity(docs.len());
        let mut sparse = Vec::with_capacity(docs.len());
        let mut multivec = MultiVecStore::new();
        for (id, tokens) in &docs {
            let enc = encoder.encode(tokens).map_err(err)?;
            dense.push((id.clone(), enc.cls));
            sparse.push(SparseDoc::from_tokens(id.clone(), enc.term_weights, tokens));
            multivec.add_doc(id.clone(), enc.multivec).map_err(err)?;
        }
        Ok(Self {
            encoder,
            dense: DenseIndex::build(dense).map_err(err)?,
            sparse: SparseIndex::build(sparse).map_err(err)?,
            multivec,
        })
    }

    /// Fused top `k` with per-method component scores.
    #[pyo3(signature = (tokens, preset="miracl_all", k=10))]
    fn search(&self, tokens: Vec<u32>, preset: &str, k: usize) -> PyResult<Vec<FusedHit>> {
        let cfg = HybridConfig::preset(preset)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown preset `{preset}`")))?;
        let enc = self.encoder.encode(&tokens).map_err(err)?;
        let query = Query {
            id: String::new(),
            dense: Some(enc.cls),
            sparse: Some(enc.term_weights),
            multivec: Some(enc.multivec),
        };
        let indexes = Indexes {
            dense: Some(&self.dense),
            sparse: Some(&self.sparse),
            multivec: Some(&self.multivec),
        };
        let hits = retrieve_hybrid(&query, &indexes, &cfg, k).map_err(err)?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let c = h.components.unwrap_or_default();
                (h.doc_id, h.score, c.dense, c.lex, c.mul)
            })
            .collect())
    }
}

fn run_of(run: HashMap<String, Vec<String>>) -> RunFile {
    let mut out = RunFile::new();
    for (q, docs) in run {
        let n = docs.len() as f64;
        let hits: Vec<ScoredHit> =
            docs.into_iter().enumerate().map(|(i, d)| ScoredHit::new(d, n - i as f64)).collect();
        out.insert_hits(q, &hits);
    }
    out
}

fn qrels_of(qrels: HashMap<String, HashMap<String, u32>>) -> Qrels {
    qrels.into_iter().map(|(q, j)| (q, j.into_iter().collect())).collect()
}

/// Mean nDCG@k; `run` maps query id to a ranked list of doc ids.
#[pyfunction]
fn ndcg_at_k(
    run: HashMap<String, Vec<String>>,
    qrels: HashMap<String, HashMap<String, u32>>,
    k: usize,
) -> PyResult<f64> {
    Ok(evalkit::ndcg_at_k(&run_of(run), &qrels_of(qrels), k).map_err(err)?.mean)
}

#[pyfunction]
fn recall_at_k(
    run: HashMap<String, Vec<String>>,
    qrels: HashMap<String, HashMap<String, u32>>,
    k: usize,
) -> PyResult<f64> {
    Ok(evalkit::recall_at_k(&run_of(run), &qrels_of(qrels), k).map_err(err)?.mean)
}

#[pyfunction]
fn info_nce(scores: Vec<f64>, target: usize, tau: f64) -> PyResult<f64> {
    distill::info_nce(&scores, target, tau).map_err(err)
}

/// Every loss term for one candidate list, keyed by name.
#[pyfunction]
#[pyo3(signature = (dense, lex, mul, target, tau=0.05, weights=(1.0, 0.3, 1.0), lambdas=(1.0, 0.1, 1.0)))]
fn distill_losses(
    dense: Vec<f64>,
    lex: Vec<f64>,
    mul: Vec<f64>,
    target: usize,
    tau: f64,
    weights: (f64, f64, f64),
    lambdas: (f64, f64, f64),
) -> PyResult<BTreeMap<&'static str, f64>> {
    let cs = CandidateScores::new(dense, lex, mul, target, tau).map_err(err)?;
    let lw = LossWeights {
        w: FusionWeights::new(weights.0, weights.1, weights.2).map_err(err)?,
        lambda: [lambdas.0, lambdas.1, lambdas.2],
    };
    let b = distill::compute_losses(&cs, &lw).map_err(err)?;
    Ok(BTreeMap::from([
        ("l_dense", b.l_dense),
        ("l_lex", b.l_lex),
        ("l_mul", b.l_mul),
        ("l_inter", b.l_inter),
        ("l", b.l),
        ("lp_dense", b.lp_dense),
        ("lp_lex", b.lp_lex),
        ("lp_mul", b.lp_mul),
        ("lp", b.lp),
        ("l_final", b.l_final),
    ]))
}

/// Plans one epoch of length-grouped batches and returns the batches of
/// every worker as lists of doc ids, plus the padding fraction.
#[pyfunction]
#[pyo3(signature = (lengths, seed=0, workers=1, divisor=96, fine_tuning=false))]
fn plan_batches(
    lengths: HashMap<String, usize>,
    seed: u64,
    workers: usize,
    divisor: usize,
    fine_tuning: bool,
) -> PyResult<(Vec<Vec<Vec<String>>>, f64)> {
    let stage = if fine_tuning { TrainingStage::FineTuning } else { TrainingStage::Unsupervised };
    let table = LengthGroupTable::reference(stage, divisor);
    let lengths: BTreeMap<String, usize> = lengths.into_iter().collect();
    let groups = assign_groups(&lengths, &table).map_err(err)?;
    let plans = plan_epoch(&groups, &table, seed, workers).map_err(err)?;
    let padding = padding_stats(&plan_lengths(&plans, &lengths)).map_err(err)?.padding_fraction;
    let batches =
        plans.into_iter().map(|p| p.batches.into_iter().map(|b| b.doc_ids).collect()).collect();
    Ok((batches, padding))
}

#[pymodule]
fn tri_retrieve_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyToyEncoder>()?;
    m.add_class::<PyDenseIndex>()?;
    m.add_class::<PySparseIndex>()?;
    m.add_class::<PyHybridRetriever>()?;
    m.add_function(wrap_pyfunction!(s_dense, m)?)?;
    m.add_function(wrap_pyfunction!(s_lex, m)?)?;
    m.add_function(wrap_pyfunction!(s_mul, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_score, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(info_nce, m)?)?;
    m.add_function(wrap_pyfunction!(distill_losses, m)?)?;
    m.add_function(wrap_pyfunction!(plan_batches, m)?)?;
    Ok(())
}
