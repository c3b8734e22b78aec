//! Auxiliary item-relationship triples.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::corpus::{InteractionCorpus, PAD};
use crate::error::{Error, Result};

/// Rejection-sampling attempts before enumerating the complement.
const NEGATIVE_RETRIES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RelationTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Outcome of inserting one triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Insert {
    Added,
    Duplicate,
    SelfLoop,
}

/// Per-relation sets of ordered item pairs over a fixed item vocabulary.
#[derive(Clone, Debug, Default)]
pub struct RelationStore {
    names: Vec<String>,
    name_lookup: HashMap<String, usize>,
    num_items: usize,
    pairs: Vec<Vec<(usize, usize)>>,
    pair_sets: Vec<HashSet<(usize, usize)>>,
    adjacency: Vec<HashMap<usize, Vec<usize>>>,
    triples: Vec<RelationTriple>,
    dropped_unknown: usize,
    dropped_self_loops: usize,
    duplicates: usize,
}

#[derive(Clone, Debug, thiserror::Error)]
#[error("item {head} has no negative under relation {relation}: every other item is related")]
pub struct DegenerateRelation {
    pub head: usize,
    pub relation: usize,
}

impl RelationStore {
    pub fn new(num_items: usize) -> Self {
        RelationStore {
            num_items,
            ..Default::default()
        }
    }

    /// Index of `name`, registering it if new.
    pub fn relation_index(&mut self, name: &str) -> usize {
        if let Some(&r) = self.name_lookup.get(name) {
            return r;
        }
        let r = self.names.len();
        self.names.push(name.to_string());
        self.name_lookup.insert(name.to_string(), r);
        self.pairs.push(Vec::new());
        self.pair_sets.push(HashSet::new());
        self.adjacency.push(HashMap::new());
        r
    }

    pub fn find_relation(&self, name: &str) -> Option<usize> {
        self.name_lookup.get(name).copied()
    }

    /// Inserts `(head, relation, tail)`; self-loops and duplicates are
    /// counted and ignored.
    pub fn insert(&mut self, head: usize, relation: usize, tail: usize) -> Insert {
        assert!(
            (1..=self.num_items).contains(&head) && (1..=self.num_items).contains(&tail),
            "triple ({head}, {relation}, {tail}) outside item range 1..={}",
            self.num_items
        );
        assert!(relation < self.names.len(), "unknown relation {relation}");
        if head == tail {
            self.dropped_self_loops += 1;
            return Insert::SelfLoop;
        }
        if !self.pair_sets[relation].insert((head, tail)) {
            self.duplicates += 1;
            return Insert::Duplicate;
        }
        self.pairs[relation].push((head, tail));
        self.adjacency[relation].entry(head).or_default().push(tail);
        self.triples.push(RelationTriple {
            head,
            relation,
            tail,
        });
        Insert::Added
    }

    pub(crate) fn record_unknown(&mut self) {
        self.dropped_unknown += 1;
    }

    pub fn num_relations(&self) -> usize {
        self.names.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn relation_names(&self) -> &[String] {
        &self.names
    }

    /// |I| = Σ_r |I_r|
    pub fn num_pairs(&self) -> usize {
        self.triples.len()
    }

    pub fn relation_len(&self, relation: usize) -> usize {
        self.pairs[relation].len()
    }

    pub fn dropped_unknown(&self) -> usize {
        self.dropped_unknown
    }

    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn contains(&self, head: usize, relation: usize, tail: usize) -> bool {
        self.pair_sets
            .get(relation)
            .is_some_and(|s| s.contains(&(head, tail)))
    }

    /// Whether `(head, tail)` is related under any relation.
    pub fn contains_any(&self, head: usize, tail: usize) -> bool {
        self.pair_sets.iter().any(|s| s.contains(&(head, tail)))
    }

    /// I_{head, relation}, in insertion order.
    pub fn neighbors(&self, head: usize, relation: usize) -> &[usize] {
        self.adjacency[relation]
            .get(&head)
            .map_or(&[][..], Vec::as_slice)
    }

    pub fn iter_pairs(&self, relation: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs[relation].iter().copied()
    }

    /// Every stored triple in insertion order.
    pub fn triples(&self) -> &[RelationTriple] {
        &self.triples
    }

    /// Uniform draw from `V \ (I_{head,relation} ∪ {head, 0})`.
    pub fn sample_negative<R: Rng + ?Sized>(
        &self,
        head: usize,
        relation: usize,
        rng: &mut R,
    ) -> std::result::Result<usize, DegenerateRelation> {
        let related = self.neighbors(head, relation);
        // self-loops are never stored, so `head` is not among `related`
        let candidates = self.num_items.saturating_sub(1 + related.len());
        if candidates == 0 {
            return Err(DegenerateRelation { head, relation });
        }
        for _ in 0..NEGATIVE_RETRIES {
            let v = rng.gen_range(1..=self.num_items);
            if v != head && !self.contains(head, relation, v) {
                return Ok(v);
            }
        }
        let complement: Vec<usize> = (1..=self.num_items)
            .filter(|&v| v != head && v != PAD && !self.contains(head, relation, v))
            .collect();
        Ok(complement[rng.gen_range(0..complement.len())])
    }

    /// Writes the triples as `head<TAB>relation<TAB>tail` using the corpus's
    /// original item ids, in insertion order.
    pub fn save(&self, path: &Path, corpus: &InteractionCorpus) -> Result<()> {
        let mut s = String::new();
        for t in &self.triples {
            let _ = writeln!(
                s,
                "{}\t{}\t{}",
                corpus.item_id(t.head),
                self.names[t.relation],
                corpus.item_id(t.tail)
            );
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Reads a TAB-separated `head relation tail` file against the corpus
/// vocabulary. Triples naming unknown items are dropped and counted.
pub fn load_relations(path: &Path, corpus: &InteractionCorpus) -> Result<RelationStore> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut store = RelationStore::new(corpus.num_items());
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(
                path,
                n + 1,
                "expected `head<TAB>relation<TAB>tail`",
            ));
        }
        let r = store.relation_index(fields[1]);
        match (corpus.item_index(fields[0]), corpus.item_index(fields[2])) {
            (Some(h), Some(t)) => {
                store.insert(h, r, t);
            }
            _ => store.record_unknown(),
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::{build_corpus, Interaction};

    fn corpus(items: &[&str]) -> InteractionCorpus {
        let recs: Vec<Interaction> = items
            .iter()
            .cycle()
            .take(items.len().max(3))
            .enumerate()
            .map(|(t, i)| Interaction {
                user: "u".into(),
                item: i.to_string(),
                timestamp: t as i64,
            })
            .collect();
        build_corpus(&recs, 5).unwrap()
    }

    fn load(text: &str, corpus: &InteractionCorpus) -> RelationStore {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        load_relations(f.path(), corpus).unwrap()
    }

    #[test]
    fn dedup_unknown_and_counts() {
        let c = corpus(&["a", "b", "c"]);
        let s = load("a\talso_bought\tb\na\talso_bought\tb\n", &c);
        assert_eq!(s.num_pairs(), 1);
        assert_eq!(s.duplicates(), 1);

        let s = load("a\tr\tzzz\n", &c);
        assert_eq!((s.num_pairs(), s.dropped_unknown()), (0, 1));

        let s = load("a\tx\tb\nb\ty\tc\nc\tx\ta\n", &c);
        assert_eq!(s.num_relations(), 2);
        assert_eq!(s.relation_len(0) + s.relation_len(1), 3);
        assert_eq!(s.relation_names(), ["x", "y"]);
    }

    #[test]
    fn self_loops_dropped() {
        let c = corpus(&["a", "b", "c"]);
        let s = load("a\tr\ta\n", &c);
        assert_eq!((s.num_pairs(), s.dropped_self_loops()), (0, 1));
    }

    #[test]
    fn parse_error_has_line() {
        let c = corpus(&["a", "b", "c"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"a\tr\tb\nbroken line\n").unwrap();
        let err = load_relations(f.path(), &c).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn ordered_membership() {
        let mut s = RelationStore::new(3);
        let r0 = s.relation_index("r0");
        let r1 = s.relation_index("r1");
        s.insert(1, r0, 2);
        assert!(s.contains(1, r0, 2));
        assert!(!s.contains(2, r0, 1));
        assert!(!s.contains(1, r1, 2));
    }

    #[test]
    fn iter_pairs_insertion_order() {
        let mut s = RelationStore::new(4);
        let r = s.relation_index("r");
        let empty = s.relation_index("e");
        s.insert(3, r, 1);
        s.insert(1, r, 2);
        assert_eq!(s.iter_pairs(empty).count(), 0);
        let first: Vec<_> = s.iter_pairs(r).collect();
        assert_eq!(first, vec![(3, 1), (1, 2)]);
        assert_eq!(s.iter_pairs(r).collect::<Vec<_>>(), first);
    }

    #[test]
    fn forced_negative() {
        let mut s = RelationStore::new(3);
        let r = s.relation_index("r");
        s.insert(1, r, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert_eq!(s.sample_negative(1, r, &mut rng).unwrap(), 3);
        }
    }

    #[test]
    fn degenerate_relation_errors() {
        let mut s = RelationStore::new(3);
        let r = s.relation_index("r");
        s.insert(1, r, 2);
        s.insert(1, r, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(s.sample_negative(1, r, &mut rng).is_err());
    }

    #[test]
    fn negatives_are_uniform() {
        // |V| = 8, head 1 related to {2, 3}: candidates {4..8}.
        let mut s = RelationStore::new(8);
        let r = s.relation_index("r");
        s.insert(1, r, 2);
        s.insert(1, r, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut counts = [0usize; 9];
        for _ in 0..draws {
            counts[s.sample_negative(1, r, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[0] + counts[1] + counts[2] + counts[3], 0);
        let p = 0.2;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in &counts[4..] {
            assert!(
                (*c as f64 - draws as f64 * p).abs() < 5.0 * sigma,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn contains_agrees_with_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let mut s = RelationStore::new(n);
        s.relation_index("a");
        s.relation_index("b");
        let mut raw = Vec::new();
        for _ in 0..25 {
            let t = (
                rng.gen_range(1..=n),
                rng.gen_range(0..2),
                rng.gen_range(1..=n),
            );
            raw.push(t);
            s.insert(t.0, t.1, t.2);
        }
        for h in 1..=n {
            for r in 0..2 {
                for t in 1..=n {
                    let scan = raw
                        .iter()
                        .any(|&(a, b, c)| a == h && b == r && c == t && h != t);
                    assert_eq!(s.contains(h, r, t), scan);
                }
            }
            for r in 0..2 {
                if let Ok(v) = s.sample_negative(h, r, &mut rng) {
                    assert!(v != h && v != PAD && !s.contains(h, r, v));
                }
            }
        }
        assert_eq!(
            s.num_pairs(),
            (0..2).map(|r| s.iter_pairs(r).count()).sum::<usize>()
        );
    }
}
