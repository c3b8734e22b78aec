//! Corpus statistics: k-order transition hit ratios, related-pair hit ratio
//! and intra-sequence related-pair coverage.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::InteractionCorpus;
use crate::relstore::RelationStore;

/// Fraction of users whose (valid, test) pair occurs at distance exactly `k`
/// in some user's train prefix.
pub fn transition_hit_ratio(corpus: &InteractionCorpus, k: usize) -> f64 {
    assert!(k >= 1, "transition order must be at least 1");
    let mut pairs = HashSet::new();
    for s in corpus.splits() {
        for w in s.train.windows(k + 1) {
            pairs.insert((w[0], w[k]));
        }
    }
    fraction(corpus, |s| pairs.contains(&(s.valid, s.test)))
}

/// Fraction of users whose (valid, test) pair occurs at any distance
/// `1..=max_order` in some train prefix (`None` = unlimited).
pub fn total_transition_hit_ratio(corpus: &InteractionCorpus, max_order: Option<usize>) -> f64 {
    // shortest distance at which each ordered pair was observed
    let mut closest: HashMap<(usize, usize), usize> = HashMap::new();
    for s in corpus.splits() {
        let t = s.train;
        for i in 0..t.len() {
            let last = match max_order {
                Some(m) => t.len().min(i + m + 1),
                None => t.len(),
            };
            for j in i + 1..last {
                let d = closest.entry((t[i], t[j])).or_insert(j - i);
                *d = (*d).min(j - i);
            }
        }
    }
    fraction(corpus, |s| closest.contains_key(&(s.valid, s.test)))
}

/// Fraction of users whose (valid, test) ordered pair is related under some
/// relation; with `symmetrize` the reverse direction also counts.
pub fn related_pair_hit_ratio(
    corpus: &InteractionCorpus,
    store: &RelationStore,
    symmetrize: bool,
) -> f64 {
    fraction(corpus, |s| {
        store.contains_any(s.valid, s.test) || (symmetrize && store.contains_any(s.test, s.valid))
    })
}

/// Mean over users of [`sequence_coverage`] on the full sequence.
pub fn intra_coverage(corpus: &InteractionCorpus, store: &RelationStore) -> f64 {
    if corpus.num_users() == 0 {
        return 0.0;
    }
    let total: f64 = corpus
        .sequences()
        .map(|s| sequence_coverage(s, store))
        .sum();
    total / corpus.num_users() as f64
}

/// `|I ∩ (S × S)| / |S|²` where `S` is the set of items in `seq` and `I`
/// the union of all relation pairs. Empty sequences cover nothing.
pub fn sequence_coverage(seq: &[usize], store: &RelationStore) -> f64 {
    let mut items: Vec<usize> = seq.to_vec();
    items.sort_unstable();
    items.dedup();
    if items.is_empty() {
        return 0.0;
    }
    let hits = items
        .iter()
        .flat_map(|&a| items.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| store.contains_any(a, b))
        .count();
    hits as f64 / (items.len() * items.len()) as f64
}

fn fraction<F>(corpus: &InteractionCorpus, hit: F) -> f64
where
    F: Fn(&crate::corpus::Split<'_>) -> bool,
{
    if corpus.num_users() == 0 {
        return 0.0;
    }
    corpus.splits().filter(|s| hit(s)).count() as f64 / corpus.num_users() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsReport {
    /// HR_1, HR_2, HR_3
    pub transition_hr: [f64; 3],
    pub total_transition_hr: f64,
    pub related_pair_hr: f64,
    pub intra_coverage: f64,
    pub max_order: Option<usize>,
    pub symmetrize: bool,
    pub users: usize,
    pub items: usize,
    /// Pair count per relation name.
    pub relation_pairs: Vec<(String, usize)>,
}

impl StatsReport {
    pub fn compute(
        corpus: &InteractionCorpus,
        store: &RelationStore,
        symmetrize: bool,
        max_order: Option<usize>,
    ) -> StatsReport {
        StatsReport {
            transition_hr: [1, 2, 3].map(|k| transition_hit_ratio(corpus, k)),
            total_transition_hr: total_transition_hit_ratio(corpus, max_order),
            related_pair_hr: related_pair_hit_ratio(corpus, store, symmetrize),
            intra_coverage: intra_coverage(corpus, store),
            max_order,
            symmetrize,
            users: corpus.num_users(),
            items: corpus.num_items(),
            relation_pairs: store
                .relation_names()
                .iter()
                .enumerate()
                .map(|(r, n)| (n.clone(), store.relation_len(r)))
                .collect(),
        }
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "users={}", self.users);
        let _ = writeln!(s, "items={}", self.items);
        for (k, hr) in self.transition_hr.iter().enumerate() {
            let _ = writeln!(s, "hr_order_{}={:.6}", k + 1, hr);
        }
        let _ = writeln!(s, "hr_total={:.6}", self.total_transition_hr);
        let _ = writeln!(
            s,
            "max_order={}",
            self.max_order
                .map_or("unlimited".to_string(), |m| m.to_string())
        );
        let _ = writeln!(s, "hr_related_pairs={:.6}", self.related_pair_hr);
        let _ = writeln!(s, "symmetrize={}", self.symmetrize);
        let _ = writeln!(s, "intra_coverage={:.6}", self.intra_coverage);
        for (name, n) in &self.relation_pairs {
            let _ = writeln!(s, "pairs.{name}={n}");
        }
        s
    }

    /// One JSON object per statistic.
    pub fn to_jsonl(&self) -> String {
        let mut rows: Vec<(String, f64)> = self
            .transition_hr
            .iter()
            .enumerate()
            .map(|(k, v)| (format!("hr_order_{}", k + 1), *v))
            .collect();
        rows.push(("hr_total".into(), self.total_transition_hr));
        rows.push(("hr_related_pairs".into(), self.related_pair_hr));
        rows.push(("intra_coverage".into(), self.intra_coverage));
        let mut s = String::new();
        for (name, value) in rows {
            let line = serde_json::json!({ "statistic": name, "value": value });
            let _ = writeln!(s, "{line}");
        }
        s
    }
}
