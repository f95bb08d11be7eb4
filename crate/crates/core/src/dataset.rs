//! Labeled sets, pairwise similarity, pair balance counts, batching, and
//! the standard / zero-shot evaluation splits.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::codec::HashCode;
use crate::encoder::HashActivation;
use crate::error::{Error, Result};
use crate::features::FeatureArchive;

/// Item labels plus the class-name table, detached from feature storage.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub labels: Vec<u32>,
    pub label_table: Vec<String>,
}

impl LabeledSet {
    pub fn from_archive(archive: &FeatureArchive) -> Self {
        LabeledSet {
            ids: archive.clips.iter().map(|c| c.clip_id().to_string()).collect(),
            labels: archive.clips.iter().map(|c| c.label()).collect(),
            label_table: archive.label_table.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_table.len()
    }

    /// One-hot label matrix L (N x D rows).
    pub fn one_hot(&self) -> Vec<Vec<f64>> {
        let d = self.num_classes();
        self.labels
            .iter()
            .map(|&l| {
                let mut row = vec![0.0; d];
                row[l as usize] = 1.0;
                row
            })
            .collect()
    }

    /// Item indices per class, in dataset order.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }
}

/// O(1) similarity predicate backed by label equality; never materializes
/// the N x N similarity matrix.
#[derive(Debug, Clone)]
pub struct SimilarityOracle {
    labels: Vec<u32>,
}

impl SimilarityOracle {
    pub fn from_labels(labels: &[u32]) -> Self {
        SimilarityOracle {
            labels: labels.to_vec(),
        }
    }

    pub fn is_similar(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }
}

/// Builds the similarity oracle from one-hot rows, validating each row.
pub fn build_similarity(one_hot: &[Vec<f64>]) -> Result<SimilarityOracle> {
    let mut labels = Vec::with_capacity(one_hot.len());
    for (row_idx, row) in one_hot.iter().enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::NotOneHot { row: row_idx });
        }
        labels.push(row.iter().position(|&v| v == 1.0).unwrap() as u32);
    }
    Ok(SimilarityOracle { labels })
}

/// Counts similar/dissimilar unordered pairs i < j over the whole label set.
pub fn count_pair_balance(labels: &[u32]) -> (u64, u64) {
    let n = labels.len() as u64;
    let total = n * n.saturating_sub(1) / 2;
    let max_label = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut per_class = vec![0u64; max_label];
    for &l in labels {
        per_class[l as usize] += 1;
    }
    let similar: u64 = per_class.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    (similar, total - similar)
}

/// One supervised training pair within a batch (positions, not dataset
/// indices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub similar: bool,
    pub weight: f64,
}

/// A batch of pairs plus the per-item forward results the loss consumes.
#[derive(Debug)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
    pub activations: Vec<HashActivation>,
    pub codes: Vec<HashCode>,
}

/// Dataset-level pair weights from the global class balance.
#[derive(Debug, Clone, Copy)]
pub struct PairWeights {
    pub similar: f64,
    pub dissimilar: f64,
}

impl PairWeights {
    pub fn from_balance(n_similar: u64, n_dissimilar: u64) -> Result<Self> {
        Ok(PairWeights {
            similar: crate::loss::pair_weight(true, n_similar, n_dissimilar)?,
            dissimilar: crate::loss::pair_weight(false, n_similar, n_dissimilar)?,
        })
    }

    /// Unit weights (the plain-contrastive baseline).
    pub fn unit() -> Self {
        PairWeights {
            similar: 1.0,
            dissimilar: 1.0,
        }
    }
}

/// All unordered within-batch pairs, tagged with similarity and the
/// dataset-level weight. `batch_items` are dataset indices; the returned
/// pairs use batch positions.
pub fn sample_pairs(
    batch_items: &[usize],
    oracle: &SimilarityOracle,
    weights: &PairWeights,
) -> Result<Vec<Pair>> {
    if batch_items.len() < 2 {
        return Err(Error::BatchTooSmall(batch_items.len()));
    }
    let b = batch_items.len();
    let mut pairs = Vec::with_capacity(b * (b - 1) / 2);
    for i in 0..b {
        for j in (i + 1)..b {
            let similar = oracle.is_similar(batch_items[i], batch_items[j]);
            pairs.push(Pair {
                i,
                j,
                similar,
                weight: if similar { weights.similar } else { weights.dissimilar },
            });
        }
    }
    Ok(pairs)
}

/// Stratified per-epoch shuffle: items are shuffled within each class and
/// the classes are interleaved round-robin, so consecutive batches mix
/// classes. A trailing single-item batch is merged into its predecessor.
pub fn epoch_batches(labels: &[u32], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 2, "batch size must be at least 2");
    let max_label = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); max_label];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l as usize].push(i);
    }
    for items in per_class.iter_mut() {
        items.shuffle(rng);
    }
    // round-robin interleave
    let mut order = Vec::with_capacity(labels.len());
    let mut cursors = vec![0usize; per_class.len()];
    loop {
        let mut any = false;
        for (c, items) in per_class.iter().enumerate() {
            if cursors[c] < items.len() {
                order.push(items[cursors[c]]);
                cursors[c] += 1;
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Standard-protocol split: a stratified query slice is held out, the
/// database is everything else, and the training items are a stratified
/// fraction of the database.
#[derive(Debug, Clone)]
pub struct StandardSplit {
    pub train: Vec<usize>,
    pub database: Vec<usize>,
    pub queries: Vec<usize>,
}

/// Fraction of each class held out as queries by both split protocols.
pub const QUERY_FRACTION: f64 = 0.2;

pub fn split_standard(set: &LabeledSet, train_fraction: f64, seed: u64) -> Result<StandardSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    use rand::SeedableRng;
    let mut train = Vec::new();
    let mut database = Vec::new();
    let mut queries = Vec::new();
    for mut members in set.by_class() {
        members.shuffle(&mut rng);
        let n = members.len();
        if n == 0 {
            continue;
        }
        let n_query = ((n as f64 * QUERY_FRACTION).round() as usize).clamp(1, n.saturating_sub(1));
        let n_train = ((n as f64 * train_fraction).round() as usize).min(n - n_query);
        queries.extend(&members[..n_query]);
        database.extend(&members[n_query..]);
        train.extend(&members[n_query..n_query + n_train]);
    }
    train.sort_unstable();
    database.sort_unstable();
    queries.sort_unstable();
    Ok(StandardSplit {
        train,
        database,
        queries,
    })
}

/// Zero-shot split: a class-level partition into seen and unseen classes.
/// The model trains on seen-class items only; queries are a stratified
/// slice of the unseen-class items, searched against everything else
/// (including the remaining unseen items).
#[derive(Debug, Clone)]
pub struct ZeroShotSplit {
    pub seen_classes: Vec<u32>,
    pub unseen_classes: Vec<u32>,
    pub train: Vec<usize>,
    pub database: Vec<usize>,
    pub queries: Vec<usize>,
}

pub fn split_zero_shot(
    set: &LabeledSet,
    query_class_fraction: f64,
    seed: u64,
) -> Result<ZeroShotSplit> {
    let d = set.num_classes();
    if d < 3 {
        return Err(Error::TooFewClasses { needed: 3, got: d });
    }
    if !(query_class_fraction > 0.0 && query_class_fraction < 1.0) {
        return Err(Error::Config(format!(
            "zero-shot class fraction must lie in (0, 1), got {query_class_fraction}"
        )));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut classes: Vec<u32> = (0..d as u32).collect();
    classes.shuffle(&mut rng);
    let n_unseen = ((d as f64 * query_class_fraction).round() as usize).clamp(1, d - 1);
    let mut unseen: Vec<u32> = classes[..n_unseen].to_vec();
    let mut seen: Vec<u32> = classes[n_unseen..].to_vec();
    seen.sort_unstable();
    unseen.sort_unstable();

    let mut train = Vec::new();
    let mut database = Vec::new();
    let mut queries = Vec::new();
    for (class, mut members) in set.by_class().into_iter().enumerate() {
        let class = class as u32;
        if seen.contains(&class) {
            train.extend(&members);
            database.extend(&members);
        } else {
            members.shuffle(&mut rng);
            let n = members.len();
            if n == 0 {
                continue;
            }
            let n_query =
                ((n as f64 * QUERY_FRACTION).round() as usize).clamp(1, n.saturating_sub(1));
            queries.extend(&members[..n_query]);
            database.extend(&members[n_query..]);
        }
    }
    train.sort_unstable();
    database.sort_unstable();
    queries.sort_unstable();
    Ok(ZeroShotSplit {
        seen_classes: seen,
        unseen_classes: unseen,
        train,
        database,
        queries,
    })
}
