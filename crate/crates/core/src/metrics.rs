//! Retrieval metrics: precision@k, average precision, mAP, and precision
//! within a Hamming radius, plus the end-to-end evaluation harness.

use rayon::prelude::*;

use crate::encoder::{encoder_forward, EncoderParams};
use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::index::RetrievalIndex;

/// Binary relevance flags for one query's full ranking, plus the number of
/// relevant items in the database (the query's own entry excluded).
#[derive(Debug, Clone)]
pub struct RelevanceList {
    pub flags: Vec<bool>,
    pub total_relevant: usize,
}

impl RelevanceList {
    pub fn new(flags: Vec<bool>, total_relevant: usize) -> Self {
        debug_assert!(total_relevant >= flags.iter().filter(|&&f| f).count() || flags.is_empty());
        RelevanceList {
            flags,
            total_relevant,
        }
    }

    /// Builds the list from a complete ranking; the relevant total is the
    /// flag count itself.
    pub fn from_full_ranking(flags: Vec<bool>) -> Self {
        let total = flags.iter().filter(|&&f| f).count();
        RelevanceList {
            flags,
            total_relevant: total,
        }
    }
}

/// Fraction of relevant results among the first min(k, len) entries.
pub fn precision_at_k(rel: &RelevanceList, k: usize) -> f64 {
    let n = k.min(rel.flags.len());
    if n == 0 {
        return 0.0;
    }
    rel.flags[..n].iter().filter(|&&f| f).count() as f64 / n as f64
}

/// AP@k = sum of precision@i at relevant ranks i <= k, normalized by
/// min(total relevant, k). Zero relevant items gives 0.
pub fn average_precision(rel: &RelevanceList, k: usize) -> f64 {
    let denom = rel.total_relevant.min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, &f) in rel.flags.iter().take(k).enumerate() {
        if f {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    acc / denom as f64
}

/// Arithmetic mean of AP@k over a query set. k equal to the database size
/// gives the "all retrieved" mode.
pub fn mean_average_precision(queries: &[RelevanceList], k: usize) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    queries.iter().map(|r| average_precision(r, k)).sum::<f64>() / queries.len() as f64
}

/// Fraction of relevant items among everything retrieved within the radius;
/// an empty result set counts as 0.
pub fn precision_hamming_radius(flags_within_radius: &[bool]) -> f64 {
    if flags_within_radius.is_empty() {
        return 0.0;
    }
    flags_within_radius.iter().filter(|&&f| f).count() as f64 / flags_within_radius.len() as f64
}

/// Hamming radius used in reports.
pub const REPORT_RADIUS: u32 = 2;

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub id: String,
    pub ap_at_k: f64,
    pub precision_at_k: f64,
    pub radius_precision: f64,
}

/// Protocol annotation carried into reports.
#[derive(Debug, Clone)]
pub enum ProtocolInfo {
    Standard,
    ZeroShot {
        seen_classes: Vec<String>,
        unseen_classes: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub bits: u32,
    pub k: usize,
    pub map_at_k: f64,
    pub map_all: f64,
    pub mean_precision_at_k: f64,
    pub mean_radius_precision: f64,
    pub per_query: Vec<QueryOutcome>,
    pub protocol: ProtocolInfo,
}

impl EvalReport {
    /// Summary CSV: `metric,bits,k,value` rows; protocol details appear as
    /// `#`-prefixed header lines.
    pub fn report_csv(&self) -> String {
        let mut out = String::new();
        match &self.protocol {
            ProtocolInfo::Standard => out.push_str("# protocol,standard\n"),
            ProtocolInfo::ZeroShot {
                seen_classes,
                unseen_classes,
            } => {
                out.push_str("# protocol,zero-shot\n");
                out.push_str(&format!("# seen_classes,{}\n", seen_classes.join(" ")));
                out.push_str(&format!("# unseen_classes,{}\n", unseen_classes.join(" ")));
            }
        }
        out.push_str("metric,bits,k,value\n");
        out.push_str(&format!("map,{},{},{:.6}\n", self.bits, self.k, self.map_at_k));
        out.push_str(&format!("map,{},all,{:.6}\n", self.bits, self.map_all));
        out.push_str(&format!(
            "precision,{},{},{:.6}\n",
            self.bits, self.k, self.mean_precision_at_k
        ));
        out.push_str(&format!(
            "radius_precision,{},{},{:.6}\n",
            self.bits, REPORT_RADIUS, self.mean_radius_precision
        ));
        out
    }

    /// Per-query CSV: `query_id,ap,precision_at_k,radius2_precision`.
    pub fn per_query_csv(&self) -> String {
        let mut out = String::from("query_id,ap,precision_at_k,radius2_precision\n");
        for q in &self.per_query {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                q.id, q.ap_at_k, q.precision_at_k, q.radius_precision
            ));
        }
        out
    }
}

/// Ranks the whole index against one precomputed query code (excluding the
/// query's own id when present) and scores it.
pub fn score_query(
    index: &RetrievalIndex,
    code: &crate::codec::HashCode,
    query_id: &str,
    query_label: u32,
    k: usize,
) -> Result<(QueryOutcome, RelevanceList)> {
    let distances = index.scan_distances(code)?;
    let mut order: Vec<usize> = (0..index.len()).filter(|&i| index.id(i) != query_id).collect();
    order.sort_unstable_by_key(|&i| (distances[i], i));
    let flags: Vec<bool> = order.iter().map(|&i| index.label(i) == query_label).collect();
    let rel = RelevanceList::from_full_ranking(flags);

    let radius_flags: Vec<bool> = order
        .iter()
        .take_while(|&&i| distances[i] <= REPORT_RADIUS)
        .map(|&i| index.label(i) == query_label)
        .collect();

    Ok((
        QueryOutcome {
            id: query_id.to_string(),
            ap_at_k: average_precision(&rel, k),
            precision_at_k: precision_at_k(&rel, k),
            radius_precision: precision_hamming_radius(&radius_flags),
        },
        rel,
    ))
}

/// Encodes each query, ranks the whole index against it (excluding the
/// query's own id when present), and aggregates the metrics.
pub fn evaluate(
    params: &EncoderParams,
    index: &RetrievalIndex,
    queries: &[&FeatureTensor],
    k: usize,
    protocol: ProtocolInfo,
) -> Result<EvalReport> {
    if params.hash_bits != index.bits() {
        return Err(Error::BitsMismatch {
            expected: index.bits(),
            actual: params.hash_bits,
        });
    }
    if queries.is_empty() {
        return Err(Error::EmptyBatch);
    }

    struct PerQuery {
        outcome: QueryOutcome,
        rel: RelevanceList,
    }

    let results: Vec<PerQuery> = queries
        .par_iter()
        .map(|query| -> Result<PerQuery> {
            let code = encoder_forward(params, query)?.code();
            let (outcome, rel) = score_query(index, &code, query.clip_id(), query.label(), k)?;
            Ok(PerQuery { outcome, rel })
        })
        .collect::<Result<_>>()?;

    let rels: Vec<RelevanceList> = results.iter().map(|r| r.rel.clone()).collect();
    let n_db_max = rels.iter().map(|r| r.flags.len()).max().unwrap_or(0);
    let per_query: Vec<QueryOutcome> = results.into_iter().map(|r| r.outcome).collect();

    Ok(EvalReport {
        bits: index.bits(),
        k,
        map_at_k: mean_average_precision(&rels, k),
        map_all: mean_average_precision(&rels, n_db_max.max(1)),
        mean_precision_at_k: per_query.iter().map(|q| q.precision_at_k).sum::<f64>()
            / per_query.len() as f64,
        mean_radius_precision: per_query.iter().map(|q| q.radius_precision).sum::<f64>()
            / per_query.len() as f64,
        per_query,
        protocol,
    })
}

/// Expected AP of a uniformly random ranking with `relevant` relevant items
/// among `database` entries: (1/N) * (H_N + (R-1)(N - H_N)/(N-1)).
/// This is the analytic chance baseline for retrieval mAP.
pub fn random_ranking_ap(relevant: usize, database: usize) -> f64 {
    let (r, n) = (relevant as f64, database as f64);
    if relevant == 0 || database == 0 {
        return 0.0;
    }
    let h_n: f64 = (1..=database).map(|i| 1.0 / i as f64).sum();
    if database == 1 {
        return 1.0;
    }
    (h_n + (r - 1.0) * (n - h_n) / (n - 1.0)) / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rel(flags: &[u8], total: usize) -> RelevanceList {
        RelevanceList::new(flags.iter().map(|&f| f == 1).collect(), total)
    }

    #[test]
    fn precision_at_k_hand_values() {
        let r = rel(&[1, 0, 1], 2);
        assert!((precision_at_k(&r, 3) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(precision_at_k(&rel(&[1, 1, 1], 3), 2), 1.0);
        assert_eq!(precision_at_k(&rel(&[0, 0], 5), 2), 0.0);
        assert_eq!(precision_at_k(&rel(&[], 0), 10), 0.0);
    }

    #[test]
    fn average_precision_hand_values() {
        let r = rel(&[1, 0, 1], 2);
        assert!((average_precision(&r, 3) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&rel(&[1, 1], 2), 2), 1.0);
        assert!((average_precision(&rel(&[0, 1], 1), 2) - 0.5).abs() < 1e-12);
        assert_eq!(average_precision(&rel(&[0, 0], 0), 2), 0.0);
    }

    #[test]
    fn map_is_the_mean_of_ap() {
        let a = rel(&[1, 1], 2); // AP 1.0
        let b = rel(&[0, 1], 1); // AP 0.5
        assert!((mean_average_precision(&[a.clone(), b], 2) - 0.75).abs() < 1e-12);
        assert!((mean_average_precision(&[a.clone()], 2) - average_precision(&a, 2)).abs() < 1e-12);
    }

    #[test]
    fn radius_precision_conventions() {
        assert_eq!(precision_hamming_radius(&[true, false]), 0.5);
        assert_eq!(precision_hamming_radius(&[]), 0.0);
        assert_eq!(precision_hamming_radius(&[true, true, true]), 1.0);
    }

    /// From-scratch reference implementations used as the oracle.
    mod reference {
        pub fn precision(flags: &[bool], k: usize) -> f64 {
            let n = k.min(flags.len());
            if n == 0 {
                return 0.0;
            }
            let mut hits = 0;
            for &f in &flags[..n] {
                if f {
                    hits += 1;
                }
            }
            hits as f64 / n as f64
        }

        pub fn average_precision(flags: &[bool], total_relevant: usize, k: usize) -> f64 {
            let denom = total_relevant.min(k);
            if denom == 0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for i in 0..k.min(flags.len()) {
                if flags[i] {
                    acc += precision(flags, i + 1);
                }
            }
            acc / denom as f64
        }
    }

    #[test]
    fn metrics_match_brute_force_reference_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..100 {
            let n = rng.gen_range(1..=200);
            let flags: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let total = flags.iter().filter(|&&f| f).count();
            let r = RelevanceList::new(flags.clone(), total);
            for &k in &[1usize, 5, 10, 100, n] {
                let ap = average_precision(&r, k);
                let ap_ref = reference::average_precision(&flags, total, k);
                assert!((ap - ap_ref).abs() <= 1e-12, "ap {ap} vs {ap_ref}");
                let p = precision_at_k(&r, k);
                let p_ref = reference::precision(&flags, k);
                assert!((p - p_ref).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn random_ranking_ap_matches_simulation() {
        // Monte-Carlo check of the closed form.
        let mut rng = StdRng::seed_from_u64(7);
        for &(r, n) in &[(3usize, 10usize), (10, 50), (1, 20)] {
            let trials = 20_000;
            let mut acc = 0.0;
            for _ in 0..trials {
                let mut flags = vec![false; n];
                // random positions for the r relevant items
                let mut idx: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = rng.gen_range(0..=i);
                    idx.swap(i, j);
                }
                for &i in idx.iter().take(r) {
                    flags[i] = true;
                }
                acc += reference::average_precision(&flags, r, n);
            }
            let mc = acc / trials as f64;
            let analytic = random_ranking_ap(r, n);
            assert!(
                (mc - analytic).abs() < 0.01,
                "r={r} n={n}: mc {mc} vs analytic {analytic}"
            );
        }
    }

    mod scoring {
        use super::super::*;
        use crate::codec::HashCode;
        use crate::index::RetrievalIndex;

        /// One distinct code per class, shared by all items of the class.
        fn class_code(class: u32) -> HashCode {
            let signs: Vec<i8> = (0..16).map(|b| if b % 4 == class as usize % 4 { 1 } else { -1 }).collect();
            let mut signs = signs;
            // separate classes further by flipping a unique leading block
            for b in 0..(class as usize % 8) {
                signs[b] = -signs[b];
            }
            HashCode::from_signs(&signs)
        }

        fn class_index(items_per_class: usize, classes: u32) -> RetrievalIndex {
            let mut codes = Vec::new();
            let mut ids = Vec::new();
            let mut labels = Vec::new();
            for c in 0..classes {
                for i in 0..items_per_class {
                    codes.push(class_code(c));
                    ids.push(format!("c{c}_{i}"));
                    labels.push(c);
                }
            }
            RetrievalIndex::build(
                16,
                &codes,
                ids,
                labels,
                (0..classes).map(|c| format!("class{c}")).collect(),
            )
            .unwrap()
        }

        #[test]
        fn identical_codes_per_class_give_perfect_map() {
            let index = class_index(5, 3);
            let mut rels = Vec::new();
            for c in 0..3u32 {
                let (outcome, rel) =
                    score_query(&index, &class_code(c), &format!("c{c}_0"), c, 100).unwrap();
                assert_eq!(outcome.ap_at_k, 1.0);
                rels.push(rel);
            }
            assert_eq!(mean_average_precision(&rels, 100), 1.0);
        }

        #[test]
        fn own_item_is_excluded_and_metrics_stay_defined() {
            // one item per class: after self-exclusion there are no relevant
            // items left, so AP falls back to the zero convention
            let index = class_index(1, 4);
            let (outcome, rel) = score_query(&index, &class_code(2), "c2_0", 2, 10).unwrap();
            assert_eq!(rel.flags.len(), 3);
            assert_eq!(rel.total_relevant, 0);
            assert_eq!(outcome.ap_at_k, 0.0);
            assert!(outcome.radius_precision == 0.0);
        }

        #[test]
        fn scoring_is_deterministic() {
            let index = class_index(4, 3);
            let a = score_query(&index, &class_code(1), "probe", 1, 7).unwrap();
            let b = score_query(&index, &class_code(1), "probe", 1, 7).unwrap();
            assert_eq!(a.0.ap_at_k, b.0.ap_at_k);
            assert_eq!(a.0.precision_at_k, b.0.precision_at_k);
            assert_eq!(a.1.flags, b.1.flags);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        /// Swapping a relevant item one rank above an irrelevant neighbor
        /// never decreases AP.
        #[test]
        fn promoting_a_relevant_item_never_decreases_ap(
            seed in any::<u64>(),
            n in 2usize..60,
        ) {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut flags: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let total = flags.iter().filter(|&&f| f).count();
            prop_assume!(total > 0);
            // find an (irrelevant, relevant) adjacent pair
            let pos = (1..n).find(|&i| flags[i] && !flags[i - 1]);
            prop_assume!(pos.is_some());
            let pos = pos.unwrap();
            let before = average_precision(&RelevanceList::new(flags.clone(), total), n);
            flags.swap(pos - 1, pos);
            let after = average_precision(&RelevanceList::new(flags, total), n);
            prop_assert!(after >= before - 1e-12);
        }

        #[test]
        fn metrics_stay_in_unit_interval(
            seed in any::<u64>(),
            n in 0usize..80,
            k in 1usize..100,
        ) {
            let mut rng = StdRng::seed_from_u64(seed);
            let flags: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let total = flags.iter().filter(|&&f| f).count();
            let r = RelevanceList::new(flags, total);
            let ap = average_precision(&r, k);
            let p = precision_at_k(&r, k);
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
