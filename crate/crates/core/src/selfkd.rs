//! Toy training experiment comparing self-distillation against independent
//! per-method training.
//!
//! A frozen [`ToyEncoder`] supplies hidden states. On top of it sit three
//! trainable linear heads:
//!
//! * dense: `s = Σ_k θ_k e_q[k] e_p[k]` (a diagonal bilinear form on CLS vectors)
//! * lexical: term weight `ReLU(θ · h)` per token, max over repeats, then the
//!   usual shared-term product sum
//! * multi-vector: MaxSim under the diagonal metric `θ`
//!
//! The dense and multi-vector heads start at the identity metric; the lexical
//! head starts from a random projection, so it must be learned. Training runs
//! plain SGD over batches of queries whose candidate list is
//! `[positive, dense hard negatives, in-batch positives]`. The sparse channel is
//! then evaluated alone on held-out queries with a real [`SparseIndex`].

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpusgen::{generate, SynthSpec};
use crate::dense_index::DenseIndex;
use crate::distill::{
    integrate, objective_gradients, objective_value, CandidateScores, LossWeights, Objective,
};
use crate::error::{Error, Result};
use crate::evalkit::{ndcg_at_k, Qrels, RunFile};
use crate::pipeline::mine_hard_negatives;
use crate::sparse_index::{SparseDoc, SparseIndex};
use crate::toy_encoder::{ToyEncoder, ToyEncoderParams};
use crate::types::{DenseEmbedding, TermWeightVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SelfKdConfig {
    pub seed: u64,
    pub dim: usize,
    pub n_docs: usize,
    pub n_queries: usize,
    /// Share of queries used for training; the rest are held out.
    pub train_fraction: f64,
    pub steps: usize,
    pub batch_queries: usize,
    pub hard_negatives: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub eval_k: usize,
}

impl Default for SelfKdConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 32,
            n_docs: 1000,
            n_queries: 200,
            train_fraction: 0.5,
            steps: 500,
            batch_queries: 8,
            hard_negatives: 3,
            learning_rate: 0.5,
            tau: 0.05,
            eval_k: 10,
        }
    }
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfKdOutcome {
    pub objective: Objective,
    /// nDCG@k of the lexical head alone on held-out queries.
    pub sparse_ndcg: f64,
    /// Same, before any training step.
    pub sparse_ndcg_initial: f64,
    /// Mean training objective over the last 50 steps.
    pub final_train_loss: f64,
}

/// Per-text cached encoder output.
struct Text {
    id: String,
    tokens: Vec<u32>,
    cls: Vec<f64>,
    /// Hidden states, one per token.
    hidden: Vec<Vec<f64>>,
    /// term → token positions holding it.
    occurrences: BTreeMap<u32, Vec<usize>>,
}

impl Text {
    fn new(id: String, tokens: Vec<u32>, enc: &ToyEncoder) -> Result<Self> {
        let e = enc.encode(&tokens)?;
        let mut occurrences: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &t) in tokens.iter().enumerate() {
            occurrences.entry(t).or_default().push(i);
        }
        Ok(Self { id, tokens, cls: e.cls.into_vec(), hidden: e.hidden, occurrences })
    }

    /// Weight of `term` and the position achieving it.
    fn term_weight(&self, term: u32, theta: &[f64]) -> Option<(f64, usize)> {
        self.occurrences.get(&term).map(|pos| {
            pos.iter()
                .map(|&i| (dot(theta, &self.hidden[i]).max(0.0), i))
                .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
        })
    }

    fn weights(&self, theta: &[f64]) -> Result<TermWeightVector> {
        TermWeightVector::from_pairs(
            self.hidden.iter().zip(&self.tokens).map(|(h, &t)| (t, dot(theta, h).max(0.0))),
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

#[derive(Debug, Clone)]
struct Heads {
    dense: Vec<f64>,
    lex: Vec<f64>,
    mul: Vec<f64>,
}

impl Heads {
    fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5E1F);
        let lex = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
        Self { dense: vec![1.0; dim], lex, mul: vec![1.0; dim] }
    }

    /// Dense score and its gradient with respect to the dense head.
    fn dense(&self, q: &Text, p: &Text) -> (f64, Vec<f64>) {
        let feat: Vec<f64> = q.cls.iter().zip(&p.cls).map(|(a, b)| a * b).collect();
        (dot(&self.dense, &feat), feat)
    }

    fn lex(&self, q: &Text, p: &Text) -> (f64, Vec<f64>) {
        let mut score = 0.0;
        let mut grad = vec![0.0; self.lex.len()];
        for &term in q.occurrences.keys() {
            let Some((wp, ip)) = p.term_weight(term, &self.lex) else {
                continue;
            };
            let (wq, iq) = q.term_weight(term, &self.lex).expect("query term present");
            score += wq * wp;
            if wq > 0.0 {
                axpy(&mut grad, wp, &q.hidden[iq]);
            }
            if wp > 0.0 {
                axpy(&mut grad, wq, &p.hidden[ip]);
            }
        }
        (score, grad)
    }

    fn mul(&self, q: &Text, p: &Text) -> (f64, Vec<f64>) {
        let n = q.hidden.len() as f64;
        let mut score = 0.0;
        let mut grad = vec![0.0; self.mul.len()];
        for qi in &q.hidden {
            let weighted: Vec<f64> = qi.iter().zip(&self.mul).map(|(a, t)| a * t).collect();
            let (best, j) = p
                .hidden
                .iter()
                .enumerate()
                .map(|(j, pj)| (dot(&weighted, pj), j))
                .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
            score += best / n;
            for (g, (a, b)) in grad.iter_mut().zip(qi.iter().zip(&p.hidden[j])) {
                *g += a * b / n;
            }
        }
        (score, grad)
    }
}

struct Prepared {
    docs: Vec<Text>,
    train: Vec<(Text, usize, Vec<usize>)>,
    test: Vec<Text>,
    qrels: Qrels,
}

fn prepare(cfg: &SelfKdConfig) -> Result<Prepared> {
    if cfg.batch_queries < 2 || cfg.steps == 0 || cfg.tau <= 0.0 || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidArgument(
            "selfkd needs batch_queries >= 2, steps >= 1, tau > 0 and learning_rate > 0".into(),
        ));
    }
    if !(0.0 < cfg.train_fraction && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidArgument("train_fraction must lie in (0, 1)".into()));
    }
    let enc =
        ToyEncoder::new(ToyEncoderParams { dim: cfg.dim, seed: cfg.seed, ..Default::default() })?;
    let spec = SynthSpec {
        n_docs: cfg.n_docs,
        n_queries: cfg.n_queries,
        seed: cfg.seed,
        max_len: 512,
        ..Default::default()
    };
    let corpus = generate(&spec, &enc)?;

    let docs = corpus
        .docs
        .into_iter()
        .map(|(id, t)| Text::new(id, t, &enc))
        .collect::<Result<Vec<_>>>()?;
    let doc_pos: BTreeMap<String, usize> =
        docs.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
    let index = DenseIndex::build(
        docs.iter()
            .map(|d| Ok((d.id.clone(), DenseEmbedding::from_unit(d.cls.clone())?)))
            .collect::<Result<Vec<_>>>()?,
    )?;

    let mut order: Vec<usize> = (0..corpus.queries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x5E1E);
    order.shuffle(&mut rng);
    let n_train = ((order.len() as f64) * cfg.train_fraction).round() as usize;

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut qrels = Qrels::new();
    for (rank, &qi) in order.iter().enumerate() {
        let (qid, tokens) = corpus.queries[qi].clone();
        let judged = corpus.qrels.get(&qid).cloned().unwrap_or_default();
        let q = Text::new(qid.clone(), tokens, &enc)?;
        if rank < n_train {
            let positive = judged
                .keys()
                .next()
                .and_then(|d| doc_pos.get(d).copied())
                .ok_or_else(|| Error::UnknownDoc(qid.clone()))?;
            let positives: HashSet<String> = judged.keys().cloned().collect();
            let negatives = mine_hard_negatives(
                &DenseEmbedding::from_unit(q.cls.clone())?,
                &positives,
                &index,
                cfg.hard_negatives,
            )?
            .into_iter()
            .map(|id| doc_pos[&id])
            .collect();
            train.push((q, positive, negatives));
        } else {
            qrels.insert(qid, judged);
            test.push(q);
        }
    }
    if train.len() < cfg.batch_queries || test.is_empty() {
        return Err(Error::InvalidArgument(
            "not enough queries for the requested batch size and split".into(),
        ));
    }
    Ok(Prepared { docs, train, test, qrels })
}

fn sparse_ndcg(prep: &Prepared, theta: &[f64], k: usize) -> Result<f64> {
    let index = SparseIndex::build(
        prep.docs
            .iter()
            .map(|d| Ok(SparseDoc::from_tokens(d.id.clone(), d.weights(theta)?, &d.tokens)))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let mut run = RunFile::new();
    for q in &prep.test {
        run.insert_hits(q.id.clone(), &index.search(&q.weights(theta)?, k));
    }
    Ok(ndcg_at_k(&run, &prep.qrels, k)?.mean)
}

fn train(prep: &Prepared, cfg: &SelfKdConfig, objective: Objective) -> Result<SelfKdOutcome> {
    let mut heads = Heads::init(cfg.dim, cfg.seed);
    let initial = sparse_ndcg(prep, &heads.lex, cfg.eval_k)?;
    let lw = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xBA7C);
    let mut order: Vec<usize> = (0..prep.train.len()).collect();
    let mut cursor = order.len();
    let mut recent = Vec::new();

    for step in 0..cfg.steps {
        if cursor + cfg.batch_queries > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = &order[cursor..cursor + cfg.batch_queries];
        cursor += cfg.batch_queries;

        let mut g_dense = vec![0.0; cfg.dim];
        let mut g_lex = vec![0.0; cfg.dim];
        let mut g_mul = vec![0.0; cfg.dim];
        let mut loss = 0.0;
        for &bi in batch {
            let (q, positive, negatives) = &prep.train[bi];
            let mut cands = vec![*positive];
            for &n in negatives {
                if !cands.contains(&n) {
                    cands.push(n);
                }
            }
            for &other in batch {
                let p = prep.train[other].1;
                if !cands.contains(&p) {
                    cands.push(p);
                }
            }
            let (mut sd, mut sl, mut sm) = (Vec::new(), Vec::new(), Vec::new());
            let (mut fd, mut fl, mut fm) = (Vec::new(), Vec::new(), Vec::new());
            for &c in &cands {
                let p = &prep.docs[c];
                let (s, f) = heads.dense(q, p);
                sd.push(s);
                fd.push(f);
                let (s, f) = heads.lex(q, p);
                sl.push(s);
                fl.push(f);
                let (s, f) = heads.mul(q, p);
                sm.push(s);
                fm.push(f);
            }
            let cs = CandidateScores::new(sd, sl, sm, 0, cfg.tau)?;
            let g = objective_gradients(&cs, &lw, objective)?;
            if step + 50 >= cfg.steps {
                loss += objective_value(&cs, &lw, &integrate(&cs, &lw.w)?, objective)?;
            }
            for j in 0..cands.len() {
                axpy(&mut g_dense, g.dense[j], &fd[j]);
                axpy(&mut g_lex, g.lex[j], &fl[j]);
                axpy(&mut g_mul, g.mul[j], &fm[j]);
            }
        }
        let scale = -cfg.learning_rate / cfg.batch_queries as f64;
        axpy(&mut heads.dense, scale, &g_dense);
        axpy(&mut heads.lex, scale, &g_lex);
        axpy(&mut heads.mul, scale, &g_mul);
        if step + 50 >= cfg.steps {
            recent.push(loss / cfg.batch_queries as f64);
        }
    }

    Ok(SelfKdOutcome {
        objective,
        sparse_ndcg: sparse_ndcg(prep, &heads.lex, cfg.eval_k)?,
        sparse_ndcg_initial: initial,
        final_train_loss: recent.iter().sum::<f64>() / recent.len().max(1) as f64,
    })
}

/// Trains one student per objective on the same data and initialization.
pub fn run(cfg: &SelfKdConfig, objectives: &[Objective]) -> Result<Vec<SelfKdOutcome>> {
    let prep = prepare(cfg)?;
    objectives.iter().map(|&o| train(&prep, cfg, o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SelfKdConfig {
        SelfKdConfig { n_docs: 200, n_queries: 40, steps: 20, ..Default::default() }
    }

    #[test]
    fn deterministic() {
        let a = run(&small(), &[Objective::SelfDistill]).unwrap();
        let b = run(&small(), &[Objective::SelfDistill]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let prep = prepare(&small()).unwrap();
        let heads = Heads::init(32, 3);
        let q = &prep.train[0].0;
        let p = &prep.docs[prep.train[0].1];
        let h = 1e-6;
        type Head = fn(&Heads, &Text, &Text) -> (f64, Vec<f64>);
        type Param = fn(&mut Heads) -> &mut Vec<f64>;
        let cases: [(Head, Param); 3] = [
            (Heads::dense, |h| &mut h.dense),
            (Heads::lex, |h| &mut h.lex),
            (Heads::mul, |h| &mut h.mul),
        ];
        for (score, param) in cases {
            let (_, grad) = score(&heads, q, p);
            for (k, &g) in grad.iter().enumerate().take(4) {
                let mut up = heads.clone();
                param(&mut up)[k] += h;
                let mut dn = heads.clone();
                param(&mut dn)[k] -= h;
                let fd = (score(&up, q, p).0 - score(&dn, q, p).0) / (2.0 * h);
                assert!((fd - g).abs() < 1e-5, "{fd} vs {g}");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = small();
        c.batch_queries = 1;
        assert!(run(&c, &[Objective::Independent]).is_err());
    }
}
