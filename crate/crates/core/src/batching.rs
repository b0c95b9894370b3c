//! Length-grouped batch planning for contrastive training.
//!
//! Documents are bucketed by token length, each bucket is shuffled with a
//! fixed seed, and every worker follows the same step schedule so that at
//! each step all workers draw from the same length group. Long batches can
//! be encoded in sub-batches (`split_batch` / `encode_with_split`) and
//! per-worker outputs are concatenated by `gather_all` to widen the
//! in-batch negative pool.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toy_encoder::{EncodedText, ToyEncoder};

/// Longest sequence any default group accepts (exclusive upper bound).
pub const MAX_SEQUENCE_LENGTH: usize = 8192;

// Total batch size per length range for the unsupervised and fine-tuning
// stages (summed over all devices).
const TABLE6: [(usize, usize, usize, usize); 9] = [
    (0, 500, 67_200, 1_152),
    (500, 1000, 54_720, 768),
    (1000, 2000, 37_248, 480),
    (2000, 3000, 27_648, 432),
    (3000, 4000, 21_504, 336),
    (4000, 5000, 17_280, 336),
    (5000, 6000, 15_072, 288),
    (6000, 7000, 12_288, 240),
    (7000, 8192, 9_984, 192),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingStage {
    Unsupervised,
    FineTuning,
}

/// One half-open length range `[lo, hi)` and its batch size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthGroup {
    pub lo: usize,
    pub hi: usize,
    pub batch_size: usize,
}

impl LengthGroup {
    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthGroupTable {
    groups: Vec<LengthGroup>,
}

impl LengthGroupTable {
    /// Ranges must be contiguous, ascending and non-empty; batch sizes positive.
    pub fn new(groups: Vec<LengthGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidPlan("length table has no groups".into()));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.lo >= g.hi || g.batch_size == 0 {
                return Err(Error::InvalidPlan(format!("bad group {}", g.label())));
            }
            if i > 0 && groups[i - 1].hi != g.lo {
                return Err(Error::InvalidPlan(format!(
                    "groups {} and {} are not contiguous",
                    groups[i - 1].label(),
                    g.label()
                )));
            }
        }
        Ok(Self { groups })
    }

    /// The reference per-length batch sizes divided by `divisor` (for
    /// example the device count), rounded down and floored at 1.
    pub fn reference(stage: TrainingStage, divisor: usize) -> Self {
        let divisor = divisor.max(1);
        let groups = TABLE6
            .iter()
            .map(|&(lo, hi, unsup, ft)| {
                let total = match stage {
                    TrainingStage::Unsupervised => unsup,
                    TrainingStage::FineTuning => ft,
                };
                LengthGroup { lo, hi, batch_size: (total / divisor).max(1) }
            })
            .collect();
        Self { groups }
    }

    pub fn groups(&self) -> &[LengthGroup] {
        &self.groups
    }

    /// Index of the group whose `[lo, hi)` contains `length`.
    pub fn group_of(&self, length: usize) -> Option<usize> {
        let i = self.groups.partition_point(|g| g.hi <= length);
        self.groups.get(i).filter(|g| g.lo <= length && length < g.hi).map(|_| i)
    }
}

pub fn assign_groups(
    lengths: &BTreeMap<String, usize>,
    table: &LengthGroupTable,
) -> Result<BTreeMap<String, usize>> {
    lengths
        .iter()
        .map(|(id, &len)| {
            let g = if len >= 1 { table.group_of(len) } else { None };
            g.map(|g| (id.clone(), g))
                .ok_or_else(|| Error::LengthOutOfRange { doc_id: id.clone(), length: len })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub group: usize,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub worker_id: usize,
    pub seed: u64,
    pub batches: Vec<Batch>,
}

const SCHEDULE_STREAM: u64 = u64::MAX;

/// Plans one epoch for `n_workers` workers.
///
/// Each group's members (sorted by id) are shuffled with `ChaCha8Rng`
/// keyed by `seed` on stream `group`. A group with total batch size `B`
/// yields steps of `B / n_workers` documents per worker; members that do
/// not fill a whole step are dropped. The step order across groups is a
/// second shuffle on a dedicated stream, shared by every worker.
pub fn plan_epoch(
    groups: &BTreeMap<String, usize>,
    table: &LengthGroupTable,
    seed: u64,
    n_workers: usize,
) -> Result<Vec<BatchPlan>> {
    if n_workers == 0 {
        return Err(Error::InvalidPlan("need at least one worker".into()));
    }
    let n_groups = table.groups().len();
    let mut members: Vec<Vec<&str>> = vec![Vec::new(); n_groups];
    for (id, &g) in groups {
        let slot = members
            .get_mut(g)
            .ok_or_else(|| Error::InvalidPlan(format!("group index {g} not in table")))?;
        slot.push(id.as_str());
    }

    let mut per_worker = vec![0usize; n_groups];
    let mut schedule: Vec<usize> = Vec::new();
    for (g, docs) in members.iter_mut().enumerate() {
        if docs.is_empty() {
            continue;
        }
        let total = table.groups()[g].batch_size;
        if total < n_workers {
            return Err(Error::InvalidPlan(format!(
                "group {} batch size {total} is smaller than {n_workers} workers",
                table.groups()[g].label()
            )));
        }
        per_worker[g] = total / n_workers;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        docs.shuffle(&mut rng);
        let steps = docs.len() / (per_worker[g] * n_workers);
        schedule.extend(std::iter::repeat_n(g, steps));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SCHEDULE_STREAM);
    schedule.shuffle(&mut rng);

    let mut plans: Vec<BatchPlan> = (0..n_workers)
        .map(|w| BatchPlan { worker_id: w, seed, batches: Vec::with_capacity(schedule.len()) })
        .collect();
    let mut used = vec![0usize; n_groups];
    for g in schedule {
        let size = per_worker[g];
        let start = used[g] * size * n_workers;
        for (w, plan) in plans.iter_mut().enumerate() {
            let lo = start + w * size;
            plan.batches.push(Batch {
                group: g,
                doc_ids: members[g][lo..lo + size].iter().map(|s| s.to_string()).collect(),
            });
        }
        used[g] += 1;
    }
    Ok(plans)
}

/// The plan of a single worker.
pub fn plan_worker(
    groups: &BTreeMap<String, usize>,
    table: &LengthGroupTable,
    seed: u64,
    n_workers: usize,
    worker_id: usize,
) -> Result<BatchPlan> {
    if worker_id >= n_workers {
        return Err(Error::InvalidPlan(format!("worker {worker_id} of {n_workers}")));
    }
    Ok(plan_epoch(groups, table, seed, n_workers)?.swap_remove(worker_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddingStats {
    /// Non-padding tokens.
    pub real_tokens: usize,
    /// Tokens processed after padding each batch to its longest member.
    pub total_tokens: usize,
    pub padded_tokens: usize,
    pub padding_fraction: f64,
}

pub fn padding_stats(batches: &[Vec<usize>]) -> Result<PaddingStats> {
    if batches.is_empty() || batches.iter().any(Vec::is_empty) {
        return Err(Error::EmptyInput);
    }
    let mut real = 0usize;
    let mut total = 0usize;
    for b in batches {
        let max = *b.iter().max().unwrap_or(&0);
        total += max * b.len();
        real += b.iter().sum::<usize>();
    }
    let padded = total - real;
    Ok(PaddingStats {
        real_tokens: real,
        total_tokens: total,
        padded_tokens: padded,
        padding_fraction: if total == 0 { 0.0 } else { padded as f64 / total as f64 },
    })
}

/// Lengths of every batch in `plans`, in plan order.
pub fn plan_lengths(plans: &[BatchPlan], lengths: &BTreeMap<String, usize>) -> Vec<Vec<usize>> {
    plans
        .iter()
        .flat_map(|p| &p.batches)
        .map(|b| b.doc_ids.iter().map(|id| lengths[id]).collect())
        .collect()
}

/// Uniform-random baseline: shuffles the whole corpus ignoring length and
/// cuts it into batches with the same sizes as `like`. Fails if the corpus
/// is smaller than the batches require.
pub fn random_batches(corpus: &[usize], like: &[Vec<usize>], seed: u64) -> Result<Vec<Vec<usize>>> {
    let needed: usize = like.iter().map(Vec::len).sum();
    if needed > corpus.len() {
        return Err(Error::InvalidPlan(format!(
            "random baseline needs {needed} documents but the corpus has {}",
            corpus.len()
        )));
    }
    let mut all = corpus.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let mut rest = all.as_slice();
    let mut out = Vec::with_capacity(like.len());
    for b in like {
        let (head, tail) = rest.split_at(b.len());
        out.push(head.to_vec());
        rest = tail;
    }
    Ok(out)
}

/// Seeded log-normal token lengths clamped to `[1, max_len]`.
pub fn lognormal_lengths(
    n: usize,
    mu: f64,
    sigma: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let dist = LogNormal::new(mu, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| (dist.sample(&mut rng).round() as usize).clamp(1, max_len)).collect())
}

/// Order-preserving partition into chunks of `sub_size` (last may be short).
pub fn split_batch<T: Clone>(items: &[T], sub_size: usize) -> Result<Vec<Vec<T>>> {
    if sub_size == 0 {
        return Err(Error::InvalidArgument("sub-batch size must be >= 1".into()));
    }
    Ok(items.chunks(sub_size).map(<[T]>::to_vec).collect())
}

/// Encodes each sub-batch independently and concatenates the outputs.
pub fn encode_with_split(
    batch: &[Vec<u32>],
    encoder: &ToyEncoder,
    sub_size: usize,
) -> Result<Vec<EncodedText>> {
    let mut out = Vec::with_capacity(batch.len());
    for sub in split_batch(batch, sub_size)? {
        let encoded =
            sub.par_iter().map(|tokens| encoder.encode(tokens)).collect::<Result<Vec<_>>>()?;
        out.extend(encoded);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gathered<T> {
    pub worker: usize,
    pub position: usize,
    pub item: T,
}

/// Concatenates every worker's outputs, worker rank first, then position.
pub fn gather_all<T: Clone>(per_worker: &[Vec<T>]) -> Vec<Gathered<T>> {
    per_worker
        .iter()
        .enumerate()
        .flat_map(|(worker, items)| {
            items.iter().enumerate().map(move |(position, item)| Gathered {
                worker,
                position,
                item: item.clone(),
            })
        })
        .collect()
}

/// Indices into `gathered` usable as in-batch negatives for the query at
/// (`worker`, `position`): every gathered passage except its own.
pub fn in_batch_negatives<T>(
    gathered: &[Gathered<T>],
    worker: usize,
    position: usize,
) -> Vec<usize> {
    gathered
        .iter()
        .enumerate()
        .filter(|(_, g)| !(g.worker == worker && g.position == position))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_baseline_matches_shape() {
        let corpus: Vec<usize> = (1..=20).collect();
        let like = vec![vec![1, 1, 1], vec![5, 5], vec![9; 4]];
        let r = random_batches(&corpus, &like, 3).unwrap();
        assert_eq!(r.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 4]);
        let mut seen: Vec<usize> = r.concat();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        assert_eq!(r, random_batches(&corpus, &like, 3).unwrap());
        assert!(random_batches(&corpus[..5], &like, 3).is_err());
    }

    fn lengths(values: &[usize]) -> BTreeMap<String, usize> {
        values.iter().enumerate().map(|(i, &l)| (format!("d{i:05}"), l)).collect()
    }

    #[test]
    fn reference_table_scaling() {
        let t = LengthGroupTable::reference(TrainingStage::Unsupervised, 96);
        assert_eq!(t.groups()[0].label(), "0-500");
        assert_eq!(t.groups()[0].batch_size, 700);
        assert_eq!(t.groups()[8].label(), "7000-8192");
        assert_eq!(t.groups()[8].batch_size, 104);
        let ft = LengthGroupTable::reference(TrainingStage::FineTuning, 1);
        assert_eq!(ft.groups()[1].batch_size, 768);
    }

    #[test]
    fn group_boundaries_are_half_open() {
        let t = LengthGroupTable::reference(TrainingStage::Unsupervised, 1);
        let g = assign_groups(&lengths(&[100, 500, 8191]), &t).unwrap();
        assert_eq!(g["d00000"], 0);
        assert_eq!(t.groups()[g["d00001"]].label(), "500-1000");
        assert_eq!(g["d00002"], 8);
        assert!(matches!(
            assign_groups(&lengths(&[9000]), &t),
            Err(Error::LengthOutOfRange { length: 9000, .. })
        ));
        assert!(assign_groups(&lengths(&[0]), &t).is_err());
        assert!(assign_groups(&lengths(&[8192]), &t).is_err());
    }

    #[test]
    fn table_validation() {
        let g = |lo, hi, b| LengthGroup { lo, hi, batch_size: b };
        assert!(LengthGroupTable::new(vec![g(0, 10, 2), g(11, 20, 2)]).is_err());
        assert!(LengthGroupTable::new(vec![g(0, 10, 0)]).is_err());
        assert!(LengthGroupTable::new(vec![]).is_err());
        assert!(LengthGroupTable::new(vec![g(0, 10, 2), g(10, 20, 2)]).is_ok());
    }

    fn small_table() -> LengthGroupTable {
        let g = |lo, hi, b| LengthGroup { lo, hi, batch_size: b };
        LengthGroupTable::new(vec![g(0, 50, 8), g(50, 100, 4), g(100, 1000, 2)]).unwrap()
    }

    #[test]
    fn plans_are_aligned_homogeneous_and_deterministic() {
        let lens = lengths(&lognormal_lengths(300, 4.0, 0.8, 999, 5).unwrap());
        let table = small_table();
        let groups = assign_groups(&lens, &table).unwrap();
        let a = plan_epoch(&groups, &table, 17, 2).unwrap();
        assert_eq!(a, plan_epoch(&groups, &table, 17, 2).unwrap());
        assert_ne!(a, plan_epoch(&groups, &table, 18, 2).unwrap());
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].batches.len(), a[1].batches.len());
        for (b0, b1) in a[0].batches.iter().zip(&a[1].batches) {
            assert_eq!(b0.group, b1.group);
            assert_eq!(b0.doc_ids.len(), table.groups()[b0.group].batch_size / 2);
        }
        let mut seen = std::collections::HashSet::new();
        for p in &a {
            for b in &p.batches {
                for id in &b.doc_ids {
                    assert_eq!(groups[id], b.group);
                    assert!(seen.insert(id.clone()), "document planned twice");
                }
            }
        }
        assert_eq!(plan_worker(&groups, &table, 17, 2, 1).unwrap(), a[1]);
        assert!(plan_epoch(&groups, &table, 17, 3).is_err());
        assert!(plan_epoch(&groups, &table, 17, 0).is_err());
    }

    #[test]
    fn padding_examples() {
        let s = padding_stats(&[vec![100, 100, 100]]).unwrap();
        assert_eq!(s.padding_fraction, 0.0);
        let s = padding_stats(&[vec![100, 200]]).unwrap();
        assert_eq!((s.padded_tokens, s.total_tokens), (100, 400));
        assert!((s.padding_fraction - 0.25).abs() < 1e-12);
        assert!(padding_stats(&[]).is_err());
    }

    #[test]
    fn split_examples() {
        let items: Vec<u32> = (0..10).collect();
        let chunks = split_batch(&items, 4).unwrap();
        assert_eq!(chunks.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        assert_eq!(chunks.concat(), items);
        assert_eq!(split_batch(&items, 50).unwrap().len(), 1);
        assert!(split_batch(&items, 0).is_err());
        assert!(split_batch::<u32>(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn gather_and_negative_pool() {
        let per_worker: Vec<Vec<u32>> = vec![(0..8).collect(), (8..16).collect()];
        let g = gather_all(&per_worker);
        assert_eq!(g.len(), 16);
        assert_eq!((g[9].worker, g[9].position, g[9].item), (1, 1, 9));
        assert_eq!(in_batch_negatives(&g, 1, 3).len(), 15);
        assert!(!in_batch_negatives(&g, 1, 3).contains(&11));
        let single = gather_all(&per_worker[..1]);
        assert_eq!(single.iter().map(|x| x.item).collect::<Vec<_>>(), per_worker[0]);
    }
}
