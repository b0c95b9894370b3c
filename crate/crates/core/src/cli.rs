//! Batch command-line interface.
//!
//! Exit status: 0 on success, 1 on a data error (the error's variant name is
//! printed), 2 on a usage error. Every output file is written atomically.
//!
//! An optional TOML config (`--config`) supplies defaults per section;
//! explicit flags always win:
//!
//! ```toml
//! seed = 7
//!
//! [encoder]
//! dim = 32
//! positional_blend = 0.25
//!
//! [gen]
//! n_docs = 2000
//! fraction_lexical = 0.5
//!
//! [hybrid]
//! preset = "miracl_ds"
//! # or explicit weights: weights = [1.0, 0.3, 0.0]
//! dense_k = 1000
//! sparse_k = 1000
//!
//! [distill]
//! tau = 0.05
//! lambda = [1.0, 0.1, 1.0]
//!
//! [batching]
//! stage = "unsupervised"
//! divisor = 96
//! workers = 1
//!
//! [bm25]
//! k1 = 1.2
//! b = 0.75
//! ```

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::batching::{
    assign_groups, lognormal_lengths, padding_stats, plan_epoch, plan_lengths, random_batches,
    LengthGroupTable, TrainingStage,
};
use crate::corpusgen::{generate, SynthSpec};
use crate::dense_index::DenseIndex;
use crate::distill::{
    compute_losses, gradient_check, CandidateScores, LossWeights, DEFAULT_TEMPERATURE,
    GRADCHECK_FLOOR, GRADCHECK_STEP,
};
use crate::error::{Error, Result};
use crate::evalkit::{self, ndcg_at_k, read_qrels, read_run, recall_at_k, RunFile};
use crate::io_util::atomic_write;
use crate::multivec::MultiVecStore;
use crate::pipeline::{
    mine_hard_negatives, read_embeddings, retrieve_hybrid_many, write_embeddings, EmbeddingRecord,
    HybridConfig, Indexes, Methods, Query, RerankPool, PRESET_NAMES,
};
use crate::sparse_index::{Bm25Params, SparseDoc, SparseIndex};
use crate::toy_encoder::{
    read_token_file, write_token_file, ToyEncoder, ToyEncoderParams, DEFAULT_MCLS_INTERVAL,
};
use crate::types::{FusionWeights, ScoredHit};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "TRI_RETRIEVE_THREADS";
/// Default tag in the last column of run files.
pub const DEFAULT_RUN_TAG: &str = "tri-retrieve";

// ---------------------------------------------------------------------------
// Config file

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub encoder: EncoderSection,
    pub gen: GenSection,
    pub hybrid: HybridSection,
    pub distill: DistillSection,
    pub batching: BatchingSection,
    pub bm25: Bm25Section,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub dim: Option<usize>,
    /// Defaults to the global seed.
    pub seed: Option<u64>,
    /// Defaults to the encoder seed plus one.
    pub lexical_projection_seed: Option<u64>,
    pub positional_blend: Option<f64>,
    pub mcls_interval: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub n_docs: Option<usize>,
    pub n_queries: Option<usize>,
    pub vocab_size: Option<u32>,
    pub length_mu: Option<f64>,
    pub length_sigma: Option<f64>,
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    pub fraction_lexical: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridSection {
    pub preset: Option<String>,
    pub weights: Option<[f64; 3]>,
    pub dense_k: Option<usize>,
    pub sparse_k: Option<usize>,
    pub rerank_n: Option<usize>,
    pub pool: Option<PoolKind>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub tau: Option<f64>,
    pub lambda: Option<[f64; 3]>,
    pub weights: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchingSection {
    pub stage: Option<StageArg>,
    pub divisor: Option<usize>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Section {
    pub k1: Option<f64>,
    pub b: Option<f64>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0);
            Error::parse(line, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(
    name = "tri-retrieve",
    version,
    about = "Dense, sparse and multi-vector hybrid retrieval toolkit"
)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus: docs.tsv, queries.tsv, qrels.txt.
    Gen(GenArgs),
    /// Encode a token file with the toy encoder, or ingest external embeddings.
    Encode(EncodeArgs),
    /// Build one index from an embeddings file.
    Index(IndexArgs),
    /// Single-method retrieval into a run file.
    Search(SearchArgs),
    /// Fused retrieval with a preset or explicit weights.
    Hybrid(HybridArgs),
    /// nDCG@k or Recall@k of a run against qrels.
    Eval(EvalArgs),
    /// Loss breakdown and finite-difference gradient report.
    DistillCheck(DistillCheckArgs),
    /// Padding of length-grouped vs random batches.
    BenchBatching(BenchBatchingArgs),
    /// Dense hard negatives per query, written as a run file.
    MineNegatives(MineArgs),
}

#[derive(Debug, Args)]
struct EncoderFlags {
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    n_docs: Option<usize>,
    #[arg(long)]
    n_queries: Option<usize>,
    #[arg(long)]
    vocab_size: Option<u32>,
    #[arg(long)]
    fraction_lexical: Option<f64>,
    #[arg(long)]
    length_mu: Option<f64>,
    #[command(flatten)]
    encoder: EncoderFlags,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Token file (`id<TAB>tok tok ...`).
    #[arg(long, conflicts_with = "ingest", required_unless_present = "ingest")]
    input: Option<PathBuf>,
    /// Existing embeddings file to validate and re-emit with a manifest.
    #[arg(long)]
    ingest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Pool the dense vector with one CLS per `--interval` tokens.
    #[arg(long)]
    mcls: bool,
    #[arg(long, requires = "mcls")]
    interval: Option<usize>,
    #[command(flatten)]
    encoder: EncoderFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IndexMode {
    Dense,
    Sparse,
    Multivec,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long, value_enum)]
    mode: IndexMode,
    #[arg(long)]
    embeddings: PathBuf,
    /// Token file for BM25 statistics (sparse mode only).
    #[arg(long)]
    tokens: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SearchMethod {
    Dense,
    Sparse,
    Bm25,
    Multivec,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long, value_enum)]
    method: SearchMethod,
    #[arg(long)]
    index: PathBuf,
    /// Query embeddings, or a query token file for bm25.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = DEFAULT_RUN_TAG)]
    tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    DenseTop,
    Union,
}

#[derive(Debug, Args)]
struct HybridArgs {
    #[arg(long, conflicts_with = "weights")]
    preset: Option<String>,
    /// Explicit fusion weights `dense,lex,mul`.
    #[arg(long, value_parser = parse_triple)]
    weights: Option<[f64; 3]>,
    #[arg(long)]
    dense: Option<PathBuf>,
    #[arg(long)]
    sparse: Option<PathBuf>,
    #[arg(long)]
    multivec: Option<PathBuf>,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    dense_k: Option<usize>,
    #[arg(long)]
    sparse_k: Option<usize>,
    /// Size of the dense-top pool.
    #[arg(long)]
    rerank_n: Option<usize>,
    #[arg(long, value_enum)]
    pool: Option<PoolKind>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = DEFAULT_RUN_TAG)]
    tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Ndcg,
    Recall,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_enum, default_value = "ndcg")]
    metric: MetricArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Debug, Args)]
struct DistillCheckArgs {
    /// JSON lines `{"dense":[..],"lex":[..],"mul":[..],"target":0}`; random
    /// instances are generated when absent.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    batches: usize,
    #[arg(long, default_value_t = 8)]
    candidates: usize,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageArg {
    Unsupervised,
    FineTuning,
}

#[derive(Debug, Args)]
struct BenchBatchingArgs {
    /// Token file whose document lengths are used; otherwise log-normal.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    n_docs: usize,
    #[arg(long, default_value_t = 6.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, value_enum)]
    stage: Option<StageArg>,
    #[arg(long)]
    divisor: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct MineArgs {
    /// Dense index (embeddings file).
    #[arg(long)]
    dense: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 7)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = DEFAULT_RUN_TAG)]
    tag: String,
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v)
        .map_err(|v| format!("expected 3 comma-separated values, got {}", v.len()))
}

// ---------------------------------------------------------------------------
// Entry point

/// Runs the CLI and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            1
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if a global pool already exists, which is fine.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

struct Ctx {
    cfg: Config,
    seed: u64,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let ctx = Ctx { cfg, seed };
    match cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Encode(a) => cmd_encode(&ctx, a),
        Command::Index(a) => cmd_index(a),
        Command::Search(a) => cmd_search(&ctx, a),
        Command::Hybrid(a) => cmd_hybrid(&ctx, a),
        Command::Eval(a) => cmd_eval(a),
        Command::DistillCheck(a) => cmd_distill_check(&ctx, a),
        Command::BenchBatching(a) => cmd_bench_batching(&ctx, a),
        Command::MineNegatives(a) => cmd_mine(a),
    }
}

impl Ctx {
    fn encoder(&self, flags: &EncoderFlags) -> Result<ToyEncoder> {
        let e = &self.cfg.encoder;
        let defaults = ToyEncoderParams::default();
        let seed = e.seed.unwrap_or(self.seed);
        ToyEncoder::new(ToyEncoderParams {
            dim: flags.dim.or(e.dim).unwrap_or(defaults.dim),
            seed,
            lexical_projection_seed: e.lexical_projection_seed.unwrap_or(seed.wrapping_add(1)),
            multivec_projection: None,
            positional_blend: e.positional_blend.unwrap_or(defaults.positional_blend),
        })
    }

    fn bm25(&self) -> Bm25Params {
        let d = Bm25Params::default();
        Bm25Params { k1: self.cfg.bm25.k1.unwrap_or(d.k1), b: self.cfg.bm25.b.unwrap_or(d.b) }
    }
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_gen(ctx: &Ctx, a: GenArgs) -> Result<()> {
    let g = &ctx.cfg.gen;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n_docs: a.n_docs.or(g.n_docs).unwrap_or(d.n_docs),
        n_queries: a.n_queries.or(g.n_queries).unwrap_or(d.n_queries),
        vocab_size: a.vocab_size.or(g.vocab_size).unwrap_or(d.vocab_size),
        length_mu: a.length_mu.or(g.length_mu).unwrap_or(d.length_mu),
        length_sigma: g.length_sigma.unwrap_or(d.length_sigma),
        min_len: g.min_len.unwrap_or(d.min_len),
        max_len: g.max_len.unwrap_or(d.max_len),
        fraction_lexical: a.fraction_lexical.or(g.fraction_lexical).unwrap_or(d.fraction_lexical),
        seed: ctx.seed,
        ..d
    };
    let enc = ctx.encoder(&a.encoder)?;
    let corpus = generate(&spec, &enc)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_token_file(&corpus.docs, &a.out_dir.join("docs.tsv"))?;
    write_token_file(&corpus.queries, &a.out_dir.join("queries.tsv"))?;
    evalkit::write_qrels(&corpus.qrels, &a.out_dir.join("qrels.txt"))?;
    println!(
        "gen docs={} queries={} lexical={} seed={}",
        corpus.docs.len(),
        corpus.queries.len(),
        spec.n_lexical(),
        ctx.seed
    );
    Ok(())
}

fn cmd_encode(ctx: &Ctx, a: EncodeArgs) -> Result<()> {
    let records = if let Some(src) = &a.ingest {
        let text = std::fs::read_to_string(src)?;
        crate::pipeline::parse_records(&text, a.encoder.dim)?
    } else {
        let input = a.input.as_ref().expect("clap enforces input or ingest");
        let enc = ctx.encoder(&a.encoder)?;
        let interval =
            a.interval.or(ctx.cfg.encoder.mcls_interval).unwrap_or(DEFAULT_MCLS_INTERVAL);
        read_token_file(input)?
            .par_iter()
            .map(|(id, tokens)| {
                let e = enc.encode(tokens)?;
                let mut rec = EmbeddingRecord::from_encoded(id.clone(), &e);
                if a.mcls {
                    rec.dense = Some(enc.encode_mcls(tokens, interval)?.into_vec());
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?
    };
    write_embeddings(&records, &a.out)?;
    println!("encode records={}", records.len());
    Ok(())
}

fn load_dense(path: &Path) -> Result<DenseIndex> {
    let docs = read_embeddings(path)?
        .iter()
        .map(|r| {
            let e = r.dense_embedding()?.ok_or(Error::MissingRepresentation("dense"))?;
            Ok((r.id.clone(), e))
        })
        .collect::<Result<Vec<_>>>()?;
    DenseIndex::build(docs)
}

fn load_multivec(path: &Path) -> Result<MultiVecStore> {
    let mut store = MultiVecStore::new();
    for r in read_embeddings(path)? {
        let mv = r.multivec()?.ok_or(Error::MissingRepresentation("multivec"))?;
        store.add_doc(r.id, mv)?;
    }
    Ok(store)
}

fn load_sparse(path: &Path) -> Result<SparseIndex> {
    SparseIndex::read_from(BufReader::new(File::open(path)?))
}

fn load_queries(path: &Path) -> Result<Vec<Query>> {
    read_embeddings(path)?.iter().map(Query::from_record).collect()
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let records = read_embeddings(&a.embeddings)?;
    match a.mode {
        IndexMode::Dense | IndexMode::Multivec => {
            let dense = a.mode == IndexMode::Dense;
            let kept: Vec<EmbeddingRecord> = records
                .into_iter()
                .map(|r| {
                    let what = if dense { "dense" } else { "multivec" };
                    let keep = if dense { r.dense.is_some() } else { r.colbert.is_some() };
                    if !keep {
                        return Err(Error::MissingRepresentation(what));
                    }
                    Ok(EmbeddingRecord {
                        id: r.id,
                        dense: if dense { r.dense } else { None },
                        sparse: None,
                        colbert: if dense { None } else { r.colbert },
                    })
                })
                .collect::<Result<_>>()?;
            // Validate by building before persisting.
            write_embeddings(&kept, &a.out)?;
            let n = if dense { load_dense(&a.out)?.len() } else { load_multivec(&a.out)?.len() };
            println!("index mode={} docs={n}", if dense { "dense" } else { "multivec" });
        }
        IndexMode::Sparse => {
            let tokens: Option<BTreeMap<String, Vec<u32>>> = match &a.tokens {
                Some(p) => Some(read_token_file(p)?.into_iter().collect()),
                None => None,
            };
            let docs = records
                .iter()
                .map(|r| {
                    let w = r.term_weights()?.ok_or(Error::MissingRepresentation("sparse"))?;
                    Ok(match &tokens {
                        Some(t) => {
                            let toks =
                                t.get(&r.id).ok_or_else(|| Error::UnknownDoc(r.id.clone()))?;
                            SparseDoc::from_tokens(r.id.clone(), w, toks)
                        }
                        None => {
                            let term_freqs: Vec<(u32, u32)> =
                                w.iter().map(|(t, _)| (t, 1)).collect();
                            SparseDoc {
                                doc_id: r.id.clone(),
                                token_count: term_freqs.len() as u32,
                                term_freqs,
                                weights: w,
                            }
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let index = SparseIndex::build(docs)?;
            let mut bytes = Vec::new();
            index.write_to(&mut bytes)?;
            atomic_write(&a.out, &bytes)?;
            println!(
                "index mode=sparse docs={} terms={} postings={}",
                index.doc_count(),
                index.term_count(),
                index.posting_entries()
            );
        }
    }
    Ok(())
}

fn write_hits(out: &Path, tag: &str, ids: &[String], hits: Vec<Vec<ScoredHit>>) -> Result<usize> {
    let mut run = RunFile::new();
    for (id, h) in ids.iter().zip(&hits) {
        run.insert_hits(id.clone(), h);
    }
    evalkit::write_run(&run, out, tag)?;
    Ok(run.queries.len())
}

fn cmd_search(ctx: &Ctx, a: SearchArgs) -> Result<()> {
    let (ids, hits): (Vec<String>, Vec<Vec<ScoredHit>>) = match a.method {
        SearchMethod::Bm25 => {
            let index = load_sparse(&a.index)?;
            let params = ctx.bm25();
            let queries = read_token_file(&a.queries)?;
            let hits = queries.par_iter().map(|(_, t)| index.search_bm25(t, a.k, params)).collect();
            (queries.into_iter().map(|(id, _)| id).collect(), hits)
        }
        SearchMethod::Dense => {
            let index = load_dense(&a.index)?;
            let queries = load_queries(&a.queries)?;
            let hits = queries
                .par_iter()
                .map(|q| {
                    index
                        .search(q.dense.as_ref().ok_or(Error::MissingRepresentation("dense"))?, a.k)
                })
                .collect::<Result<Vec<_>>>()?;
            (queries.into_iter().map(|q| q.id).collect(), hits)
        }
        SearchMethod::Sparse => {
            let index = load_sparse(&a.index)?;
            let queries = load_queries(&a.queries)?;
            let hits = queries
                .par_iter()
                .map(|q| {
                    Ok(index.search(
                        q.sparse.as_ref().ok_or(Error::MissingRepresentation("sparse"))?,
                        a.k,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            (queries.into_iter().map(|q| q.id).collect(), hits)
        }
        SearchMethod::Multivec => {
            let store = load_multivec(&a.index)?;
            let all: Vec<String> = store.iter().map(|(id, _)| id.to_string()).collect();
            let queries = load_queries(&a.queries)?;
            let hits = queries
                .par_iter()
                .map(|q| {
                    let mv = q.multivec.as_ref().ok_or(Error::MissingRepresentation("multivec"))?;
                    store.rerank(mv, &all, a.k)
                })
                .collect::<Result<Vec<_>>>()?;
            (queries.into_iter().map(|q| q.id).collect(), hits)
        }
    };
    let n = write_hits(&a.out, &a.tag, &ids, hits)?;
    println!("search queries={n}");
    Ok(())
}

fn hybrid_config(ctx: &Ctx, a: &HybridArgs) -> Result<HybridConfig> {
    let h = &ctx.cfg.hybrid;
    let weights = a.weights;
    let preset =
        a.preset.clone().or_else(|| if weights.is_some() { None } else { h.preset.clone() });
    let weights = weights.or(if a.preset.is_some() { None } else { h.weights });
    let mut cfg = match (preset, weights) {
        (Some(name), _) => HybridConfig::preset(&name).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown preset `{name}`; known: {}",
                PRESET_NAMES.join(", ")
            ))
        })?,
        (None, Some([d, l, m])) => {
            let weights = FusionWeights::new(d, l, m)?;
            HybridConfig {
                weights,
                dense_k: 1000,
                sparse_k: 1000,
                pool: if m == 0.0 {
                    RerankPool::UnionDenseSparse
                } else {
                    RerankPool::DenseTop(200)
                },
                methods: Methods { dense: true, sparse: l != 0.0, multivec: m != 0.0 },
            }
        }
        (None, None) => {
            return Err(Error::InvalidArgument("hybrid needs --preset or --weights".into()))
        }
    };
    if let Some(k) = a.dense_k.or(h.dense_k) {
        cfg.dense_k = k;
    }
    if let Some(k) = a.sparse_k.or(h.sparse_k) {
        cfg.sparse_k = k;
    }
    match a.pool.or(h.pool) {
        Some(PoolKind::Union) => cfg.pool = RerankPool::UnionDenseSparse,
        Some(PoolKind::DenseTop) => cfg.pool = RerankPool::DenseTop(200.min(cfg.dense_k)),
        None => {}
    }
    if let (RerankPool::DenseTop(_), Some(n)) = (cfg.pool, a.rerank_n.or(h.rerank_n)) {
        cfg.pool = RerankPool::DenseTop(n);
    }
    if cfg.pool == RerankPool::UnionDenseSparse && !cfg.methods.sparse && a.sparse.is_some() {
        // A union pool with a zero lexical weight still uses the sparse
        // first stage when an index is given.
        cfg.methods.sparse = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_hybrid(ctx: &Ctx, a: HybridArgs) -> Result<()> {
    let cfg = hybrid_config(ctx, &a)?;
    let k = a.k.or(ctx.cfg.hybrid.k).unwrap_or(100);
    let dense = a.dense.as_deref().filter(|_| cfg.methods.dense).map(load_dense).transpose()?;
    let sparse = a.sparse.as_deref().filter(|_| cfg.methods.sparse).map(load_sparse).transpose()?;
    let multivec =
        a.multivec.as_deref().filter(|_| cfg.methods.multivec).map(load_multivec).transpose()?;
    let indexes =
        Indexes { dense: dense.as_ref(), sparse: sparse.as_ref(), multivec: multivec.as_ref() };
    let queries = load_queries(&a.queries)?;
    let hits = retrieve_hybrid_many(&queries, &indexes, &cfg, k)?;
    let ids: Vec<String> = queries.into_iter().map(|q| q.id).collect();
    let n = write_hits(&a.out, &a.tag, &ids, hits)?;
    let w = cfg.weights;
    println!("hybrid queries={n} weights={},{},{}", w.dense, w.lex, w.mul);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let report = match a.metric {
        MetricArg::Ndcg => ndcg_at_k(&run, &qrels, a.k)?,
        MetricArg::Recall => recall_at_k(&run, &qrels, a.k)?,
    };
    println!("{}@{}={:.6}", report.metric, report.k, report.mean);
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreLine {
    dense: Vec<f64>,
    lex: Vec<f64>,
    mul: Vec<f64>,
    #[serde(default)]
    target: usize,
}

fn cmd_distill_check(ctx: &Ctx, a: DistillCheckArgs) -> Result<()> {
    let d = &ctx.cfg.distill;
    let tau = a.tau.or(d.tau).unwrap_or(DEFAULT_TEMPERATURE);
    let mut lw = LossWeights::default();
    if let Some(l) = d.lambda {
        lw.lambda = l;
    }
    if let Some([x, y, z]) = d.weights {
        lw.w = FusionWeights::new(x, y, z)?;
    }
    let instances: Vec<CandidateScores> = match &a.scores {
        Some(p) => std::fs::read_to_string(p)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let s: ScoreLine =
                    serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string()))?;
                CandidateScores::new(s.dense, s.lex, s.mul, s.target, tau)
            })
            .collect::<Result<_>>()?,
        None => {
            if a.candidates < 2 {
                return Err(Error::InvalidArgument("need at least 2 candidates".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            (0..a.batches)
                .map(|_| {
                    let mut v = || {
                        (0..a.candidates).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()
                    };
                    let (dn, lx, ml) = (v(), v(), v());
                    CandidateScores::new(dn, lx, ml, 0, tau)
                })
                .collect::<Result<_>>()?
        }
    };
    for (i, cs) in instances.iter().enumerate() {
        let b = compute_losses(cs, &lw)?;
        let err = gradient_check(cs, &lw, GRADCHECK_STEP, GRADCHECK_FLOOR)?;
        println!("batch={i} {} grad_max_rel_err={err:.3e}", b.report_line());
    }
    Ok(())
}

fn cmd_bench_batching(ctx: &Ctx, a: BenchBatchingArgs) -> Result<()> {
    let b = &ctx.cfg.batching;
    let stage = match a.stage.or(b.stage).unwrap_or(StageArg::Unsupervised) {
        StageArg::Unsupervised => TrainingStage::Unsupervised,
        StageArg::FineTuning => TrainingStage::FineTuning,
    };
    let divisor = a.divisor.or(b.divisor).unwrap_or(96);
    let workers = a.workers.or(b.workers).unwrap_or(1);
    let table = LengthGroupTable::reference(stage, divisor);
    let lengths: BTreeMap<String, usize> = match &a.input {
        Some(p) => read_token_file(p)?.into_iter().map(|(id, t)| (id, t.len())).collect(),
        None => lognormal_lengths(a.n_docs, a.mu, a.sigma, 8191, ctx.seed)?
            .into_iter()
            .enumerate()
            .map(|(i, l)| (format!("d{i:06}"), l))
            .collect(),
    };
    let groups = assign_groups(&lengths, &table)?;
    let plans = plan_epoch(&groups, &table, ctx.seed, workers)?;
    let grouped = plan_lengths(&plans, &lengths);
    let all: Vec<usize> = lengths.values().copied().collect();
    let random = random_batches(&all, &grouped, ctx.seed)?;
    let g = padding_stats(&grouped)?;
    let r = padding_stats(&random)?;
    let ratio =
        if r.padding_fraction > 0.0 { g.padding_fraction / r.padding_fraction } else { 0.0 };
    println!(
        "bench-batching corpus={} planned={} batches={} grouped_padding={:.6} random_padding={:.6} ratio={:.6}",
        lengths.len(),
        grouped.iter().map(Vec::len).sum::<usize>(),
        grouped.len(),
        g.padding_fraction,
        r.padding_fraction,
        ratio
    );
    Ok(())
}

fn cmd_mine(a: MineArgs) -> Result<()> {
    let index = load_dense(&a.dense)?;
    let queries = load_queries(&a.queries)?;
    let qrels = read_qrels(&a.qrels)?;
    let empty = BTreeMap::new();
    let hits = queries
        .par_iter()
        .map(|q| {
            let e = q.dense.as_ref().ok_or(Error::MissingRepresentation("dense"))?;
            let positives: HashSet<String> = qrels
                .get(&q.id)
                .unwrap_or(&empty)
                .iter()
                .filter(|(_, &g)| g > 0)
                .map(|(d, _)| d.clone())
                .collect();
            mine_hard_negatives(e, &positives, &index, a.n)?
                .into_iter()
                .map(|doc_id| {
                    let v = index.vector(&doc_id).expect("mined from this index");
                    let score = crate::types::dot_unchecked(e.as_slice(), v);
                    Ok(ScoredHit { doc_id, score, components: None })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = queries.into_iter().map(|q| q.id).collect();
    let n = write_hits(&a.out, &a.tag, &ids, hits)?;
    println!("mine-negatives queries={n} per_query={}", a.n);
    Ok(())
}
