use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tri_retrieve::sparse_index::{Bm25Params, SparseDoc, SparseIndex};
use tri_retrieve::TermWeightVector;

/// Straight-from-the-formula BM25 over raw token lists, no index.
fn reference_bm25(docs: &[Vec<u32>], query: &[u32], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut uniq: Vec<u32> = query.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    docs.iter()
        .map(|d| {
            let mut score = 0.0;
            for &t in &uniq {
                let tf = d.iter().filter(|&&x| x == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|o| o.contains(&t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg));
            }
            score
        })
        .collect()
}

fn random_docs(rng: &mut ChaCha8Rng, n: usize, vocab: u32) -> Vec<Vec<u32>> {
    (0..n).map(|_| (0..rng.gen_range(1..60)).map(|_| rng.gen_range(0..vocab)).collect()).collect()
}

fn build(docs: &[Vec<u32>], rng: &mut ChaCha8Rng) -> SparseIndex {
    let sparse = docs
        .iter()
        .enumerate()
        .map(|(i, toks)| {
            let w = TermWeightVector::from_pairs(toks.iter().map(|&t| (t, rng.gen_range(0.0..2.0))))
                .unwrap();
            SparseDoc::from_tokens(format!("d{i:03}"), w, toks)
        })
        .collect();
    SparseIndex::build(sparse).unwrap()
}

#[test]
fn bm25_matches_reference_on_random_corpora() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = random_docs(&mut rng, 100, 80);
        let index = build(&docs, &mut rng);
        for _ in 0..20 {
            let query: Vec<u32> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..90)).collect();
            let (k1, b) = (rng.gen_range(0.5..2.0), rng.gen_range(0.0..1.0));
            let expected = reference_bm25(&docs, &query, k1, b);
            let hits = index.search_bm25(&query, 100, Bm25Params { k1, b });
            let got: HashMap<&str, f64> = hits.iter().map(|h| (h.doc_id.as_str(), h.score)).collect();
            for (i, &e) in expected.iter().enumerate() {
                let id = format!("d{i:03}");
                let g = got.get(id.as_str()).copied().unwrap_or(0.0);
                assert!((g - e).abs() < 1e-9, "seed {seed} doc {id}: {g} vs {e}");
            }
            let mut order: Vec<(usize, f64)> =
                expected.iter().copied().enumerate().filter(|e| e.1 > 0.0).collect();
            order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let ids: Vec<String> = order.iter().map(|(i, _)| format!("d{i:03}")).collect();
            let hit_ids: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
            assert_eq!(hit_ids, ids.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}

#[test]
fn sparse_index_survives_a_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let docs = random_docs(&mut rng, 200, 150);
    let index = build(&docs, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idx.bin");
    index.write_to(std::fs::File::create(&path).unwrap()).unwrap();
    let loaded = SparseIndex::read_from(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(loaded.doc_ids(), index.doc_ids());
    for _ in 0..50 {
        let q = TermWeightVector::from_pairs(
            (0..4).map(|_| (rng.gen_range(0..150), rng.gen_range(0.0..1.0))),
        )
        .unwrap();
        assert_eq!(loaded.search(&q, 20), index.search(&q, 20));
        let terms: Vec<u32> = q.iter().map(|e| e.0).collect();
        assert_eq!(
            loaded.search_bm25(&terms, 20, Bm25Params::default()),
            index.search_bm25(&terms, 20, Bm25Params::default())
        );
    }
}
