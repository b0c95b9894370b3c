//! Seeded synthetic corpus with complementary dense and lexical signals.
//!
//! Vocabulary layout, for `V = vocab_size`:
//!
//! * **markers**: ids in the top 1% (`[V − V/100, V)`) whose salience is at
//!   least `marker_min_salience`. Each marker is planted in exactly one
//!   document and in the lexical query that targets it.
//! * **content**: ids below the marker range, split by salience into
//!   *quiet* terms (salience ≤ `−quiet_margin`, which a lexical head weights
//!   near zero) and *loud* terms (salience ≥ `quiet_margin`).
//!
//! Documents are mostly quiet terms with a `loud_fraction` share of loud
//! ones. A *lexical* query is its document's marker plus content terms not
//! in that document, so only exact term overlap finds it. A *dense* query
//! is a subset of its document's quiet terms plus noise, so its lexical
//! overlap carries almost no weight while the pooled embedding still does.
//!
//! Salience comes from the caller (for the toy encoder,
//! [`ToyEncoder::lexical_affinity`](crate::toy_encoder::ToyEncoder::lexical_affinity)).

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::Qrels;

/// Lexical salience of a term id; higher means a lexical head weights it more.
pub trait TermSalience {
    fn salience(&self, token: u32) -> f64;
}

impl<F: Fn(u32) -> f64> TermSalience for F {
    fn salience(&self, token: u32) -> f64 {
        self(token)
    }
}

impl TermSalience for crate::toy_encoder::ToyEncoder {
    fn salience(&self, token: u32) -> f64 {
        self.lexical_affinity(token)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_docs: usize,
    pub n_queries: usize,
    pub vocab_size: u32,
    pub length_mu: f64,
    pub length_sigma: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Share of queries answerable only through exact term overlap.
    pub fraction_lexical: f64,
    pub seed: u64,
    pub marker_min_salience: f64,
    pub quiet_margin: f64,
    /// Share of loud content terms in each document.
    pub loud_fraction: f64,
    /// Share of a document's quiet terms copied into its dense query.
    pub dense_keep: f64,
    /// Noise terms added to a dense query, relative to the copied count.
    pub dense_noise: f64,
    /// Content terms accompanying the marker in a lexical query.
    pub lexical_filler: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_docs: 1000,
            n_queries: 100,
            vocab_size: 100_000,
            length_mu: 3.9,
            length_sigma: 0.5,
            min_len: 8,
            max_len: 8191,
            fraction_lexical: 0.5,
            seed: 0,
            marker_min_salience: 1.0,
            quiet_margin: 0.5,
            loud_fraction: 0.1,
            dense_keep: 0.3,
            dense_noise: 0.3,
            lexical_filler: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryKind {
    Lexical,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub docs: Vec<(String, Vec<u32>)>,
    pub queries: Vec<(String, Vec<u32>)>,
    pub qrels: Qrels,
    pub kinds: BTreeMap<String, QueryKind>,
    /// Marker term of each lexical query.
    pub markers: BTreeMap<String, u32>,
}

pub fn doc_id(i: usize) -> String {
    format!("d{i:06}")
}

pub fn query_id(i: usize) -> String {
    format!("q{i:05}")
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n_docs == 0 || self.n_queries == 0 {
            return bad("n_docs and n_queries must be >= 1");
        }
        if self.n_queries > self.n_docs {
            return bad("each query needs its own relevant document: n_queries <= n_docs");
        }
        if !(0.0..=1.0).contains(&self.fraction_lexical)
            || !(0.0..=1.0).contains(&self.loud_fraction)
            || !(0.0..=1.0).contains(&self.dense_keep)
            || !(self.dense_noise >= 0.0 && self.dense_noise.is_finite())
        {
            return bad("fractions must lie in [0, 1]");
        }
        if self.vocab_size < 200 {
            return bad("vocab_size must be >= 200 so the marker range is non-empty");
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return bad("need 2 <= min_len <= max_len");
        }
        if !(self.length_sigma > 0.0 && self.length_mu.is_finite()) {
            return bad("invalid length distribution");
        }
        Ok(())
    }

    pub fn n_lexical(&self) -> usize {
        (self.fraction_lexical * self.n_queries as f64).round() as usize
    }
}

pub fn generate(spec: &SynthSpec, salience: &dyn TermSalience) -> Result<SynthCorpus> {
    spec.validate()?;
    let v = spec.vocab_size;
    let marker_lo = v - v / 100;

    let markers: Vec<u32> =
        (marker_lo..v).filter(|&t| salience.salience(t) >= spec.marker_min_salience).collect();
    let mut quiet = Vec::new();
    let mut loud = Vec::new();
    for t in 0..marker_lo {
        let s = salience.salience(t);
        if s <= -spec.quiet_margin {
            quiet.push(t);
        } else if s >= spec.quiet_margin {
            loud.push(t);
        }
    }
    let n_lexical = spec.n_lexical();
    if markers.len() < n_lexical {
        return Err(Error::InvalidSpec(format!(
            "{} lexical queries need distinct markers but only {} ids in the top 1% qualify; \
             raise vocab_size or lower marker_min_salience",
            n_lexical,
            markers.len()
        )));
    }
    if quiet.len() < 4 * spec.max_len.min(1024) || loud.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "content vocabulary too small: {} quiet and {} loud terms",
            quiet.len(),
            loud.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lengths = LogNormal::new(spec.length_mu, spec.length_sigma)
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let mut docs: Vec<Vec<u32>> = (0..spec.n_docs)
        .map(|_| {
            let len = (lengths.sample(&mut rng).round() as usize).clamp(spec.min_len, spec.max_len);
            (0..len)
                .map(|_| {
                    let pool = if rng.gen_bool(spec.loud_fraction) { &loud } else { &quiet };
                    pool[rng.gen_range(0..pool.len())]
                })
                .collect()
        })
        .collect();

    let mut relevant: Vec<usize> = (0..spec.n_docs).collect();
    relevant.shuffle(&mut rng);
    relevant.truncate(spec.n_queries);
    let mut marker_pick = markers.clone();
    marker_pick.shuffle(&mut rng);

    let mut queries = Vec::with_capacity(spec.n_queries);
    let mut qrels = Qrels::new();
    let mut kinds = BTreeMap::new();
    let mut marker_of = BTreeMap::new();
    for (qi, &di) in relevant.iter().enumerate() {
        let qid = query_id(qi);
        let (kind, tokens) = if qi < n_lexical {
            let marker = marker_pick[qi];
            let doc = &mut docs[di];
            let pos = rng.gen_range(0..=doc.len());
            doc.insert(pos, marker);
            let in_doc: HashSet<u32> = doc.iter().copied().collect();
            let mut q = vec![marker];
            while q.len() < 1 + spec.lexical_filler {
                let pool = if rng.gen_bool(0.5) { &loud } else { &quiet };
                let t = pool[rng.gen_range(0..pool.len())];
                if !in_doc.contains(&t) {
                    q.push(t);
                }
            }
            q.shuffle(&mut rng);
            marker_of.insert(qid.clone(), marker);
            (QueryKind::Lexical, q)
        } else {
            let doc = &docs[di];
            let quiet_terms: Vec<u32> = doc
                .iter()
                .copied()
                .filter(|&t| salience.salience(t) <= -spec.quiet_margin)
                .collect();
            let keep = ((quiet_terms.len() as f64 * spec.dense_keep).round() as usize)
                .clamp(1, quiet_terms.len().max(1));
            let mut q: Vec<u32> = quiet_terms
                .choose_multiple(&mut rng, keep.min(quiet_terms.len()))
                .copied()
                .collect();
            let noise = (keep as f64 * spec.dense_noise).round() as usize;
            for _ in 0..noise {
                q.push(quiet[rng.gen_range(0..quiet.len())]);
            }
            if q.is_empty() {
                q.push(quiet[rng.gen_range(0..quiet.len())]);
            }
            q.shuffle(&mut rng);
            (QueryKind::Dense, q)
        };
        qrels.entry(qid.clone()).or_default().insert(doc_id(di), 1);
        kinds.insert(qid.clone(), kind);
        queries.push((qid, tokens));
    }

    Ok(SynthCorpus {
        docs: docs.into_iter().enumerate().map(|(i, t)| (doc_id(i), t)).collect(),
        queries,
        qrels,
        kinds,
        markers: marker_of,
    })
}

impl SynthCorpus {
    /// Checks the construction invariants: every marker occurs in exactly
    /// one document, and lexical queries share no other term with it.
    pub fn check_markers(&self) -> Result<()> {
        let doc_terms: BTreeMap<&str, BTreeSet<u32>> =
            self.docs.iter().map(|(id, t)| (id.as_str(), t.iter().copied().collect())).collect();
        for (qid, &marker) in &self.markers {
            let holders: Vec<&str> = doc_terms
                .iter()
                .filter(|(_, ts)| ts.contains(&marker))
                .map(|(id, _)| *id)
                .collect();
            let rel: Vec<&String> = self.qrels[qid].keys().collect();
            if holders.len() != 1 || holders[0] != rel[0] {
                return Err(Error::InvalidSpec(format!("marker {marker} of {qid} is not unique")));
            }
            let q = &self.queries.iter().find(|(id, _)| id == qid).unwrap().1;
            if q.iter().any(|t| *t != marker && doc_terms[holders[0]].contains(t)) {
                return Err(Error::InvalidSpec(format!(
                    "{qid} overlaps its document beyond the marker"
                )));
            }
        }
        Ok(())
    }
}
