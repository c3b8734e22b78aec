//! Interaction loading, 5-core filtering, chronological ordering,
//! leave-one-out splitting and fixed-length padding.

mod synth;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use synth::{generate_synthetic, RelationGraph, SynthSpec};

use crate::error::{Error, Result};

/// Item index reserved for padding.
pub const PAD: usize = 0;

/// Minimum interactions per user kept by [`five_core_filter`].
pub const CORE_THRESHOLD: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// Reads a TAB-separated `user item timestamp` file. Blank lines are skipped.
pub fn load_interactions(path: &Path) -> Result<Vec<Interaction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, path)
}

pub(crate) fn parse_interactions(text: &str, path: &Path) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(Error::parse(path, line_no, "empty user or item id"));
        }
        let timestamp = fields[2].trim().parse::<i64>().map_err(|_| {
            Error::parse(
                path,
                line_no,
                format!("non-integer timestamp {:?}", fields[2]),
            )
        })?;
        out.push(Interaction {
            user: user.to_string(),
            item: item.to_string(),
            timestamp,
        });
    }
    Ok(out)
}

/// Keeps exactly the records whose user has at least [`CORE_THRESHOLD`]
/// records. One user-side pass; item counts are not considered.
pub fn five_core_filter(records: &[Interaction]) -> Vec<Interaction> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *counts.entry(r.user.as_str()).or_default() += 1;
    }
    records
        .iter()
        .filter(|r| counts[r.user.as_str()] >= CORE_THRESHOLD)
        .cloned()
        .collect()
}

/// Left-padded, tail-truncated window over a sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedSequence {
    pub items: Vec<usize>,
    pub true_length: usize,
}

impl PaddedSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_padding(&self, pos: usize) -> bool {
        pos < self.items.len() - self.true_length
    }

    /// Index of the first real position.
    pub fn first_real(&self) -> usize {
        self.items.len() - self.true_length
    }
}

pub fn pad_truncate(seq: &[usize], len: usize) -> PaddedSequence {
    assert!(len >= 1, "padded length must be at least 1");
    let keep = seq.len().min(len);
    let mut items = vec![PAD; len - keep];
    items.extend_from_slice(&seq[seq.len() - keep..]);
    PaddedSequence {
        items,
        true_length: keep,
    }
}

/// Users, item vocabulary and chronologically ordered sequences.
///
/// User `u` (1-based) owns `sequences[u - 1]`. Item indices are 1-based;
/// 0 is padding.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionCorpus {
    users: Vec<String>,
    items: Vec<String>,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
    sequences: Vec<Vec<usize>>,
    max_len: usize,
    seed: Option<u64>,
}

/// Leave-one-out split of one user's sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split<'a> {
    pub train: &'a [usize],
    pub valid: usize,
    pub test: usize,
}

/// Builds a corpus from (already filtered) records.
///
/// Users and items receive dense indices in first-occurrence order; each
/// user's records are stably sorted by timestamp.
pub fn build_corpus(records: &[Interaction], max_len: usize) -> Result<InteractionCorpus> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut corpus = InteractionCorpus {
        users: Vec::new(),
        items: Vec::new(),
        user_lookup: HashMap::new(),
        item_lookup: HashMap::new(),
        sequences: Vec::new(),
        max_len,
        seed: None,
    };
    let mut per_user: Vec<Vec<(i64, usize)>> = Vec::new();
    for r in records {
        let u = intern(&mut corpus.users, &mut corpus.user_lookup, &r.user);
        let v = intern(&mut corpus.items, &mut corpus.item_lookup, &r.item);
        if u > per_user.len() {
            per_user.push(Vec::new());
        }
        per_user[u - 1].push((r.timestamp, v));
    }
    for (u, mut events) in per_user.into_iter().enumerate() {
        if events.len() < 3 {
            return Err(Error::Data(format!(
                "user {:?} has {} interactions; leave-one-out needs at least 3",
                corpus.users[u],
                events.len()
            )));
        }
        events.sort_by_key(|(t, _)| *t);
        corpus
            .sequences
            .push(events.into_iter().map(|(_, v)| v).collect());
    }
    Ok(corpus)
}

fn intern(names: &mut Vec<String>, lookup: &mut HashMap<String, usize>, key: &str) -> usize {
    if let Some(&i) = lookup.get(key) {
        return i;
    }
    names.push(key.to_string());
    lookup.insert(key.to_string(), names.len());
    names.len()
}

impl InteractionCorpus {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub(crate) fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_lookup.get(id).copied()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_lookup.get(id).copied()
    }

    /// Original id of a 1-based item index.
    pub fn item_id(&self, index: usize) -> &str {
        &self.items[index - 1]
    }

    pub fn user_id(&self, index: usize) -> &str {
        &self.users[index - 1]
    }

    /// Full chronological sequence of a 1-based user index.
    pub fn sequence(&self, user: usize) -> &[usize] {
        &self.sequences[user - 1]
    }

    pub fn sequences(&self) -> impl Iterator<Item = &[usize]> {
        self.sequences.iter().map(Vec::as_slice)
    }

    pub fn split(&self, user: usize) -> Split<'_> {
        let s = self.sequence(user);
        let n = s.len();
        Split {
            train: &s[..n - 2],
            valid: s[n - 2],
            test: s[n - 1],
        }
    }

    pub fn splits(&self) -> impl Iterator<Item = Split<'_>> {
        (1..=self.num_users()).map(|u| self.split(u))
    }

    /// Number of occurrences of every item across all train prefixes,
    /// indexed by item (slot 0 unused).
    pub fn train_popularity(&self) -> Vec<usize> {
        let mut pop = vec![0; self.num_items() + 1];
        for s in self.splits() {
            for &v in s.train {
                pop[v] += 1;
            }
        }
        pop
    }

    /// Writes `vocab_users.tsv`, `vocab_items.tsv`, `sequences.tsv` and
    /// `meta.kv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_vocab(&dir.join("vocab_users.tsv"), &self.users)?;
        write_vocab(&dir.join("vocab_items.tsv"), &self.items)?;
        let mut seqs = String::new();
        for (u, s) in self.sequences.iter().enumerate() {
            let items: Vec<String> = s.iter().map(usize::to_string).collect();
            let _ = writeln!(seqs, "{}\t{}", u + 1, items.join(" "));
        }
        write_file(&dir.join("sequences.tsv"), &seqs)?;
        let mut meta = String::new();
        let _ = writeln!(meta, "L={}", self.max_len);
        let _ = writeln!(meta, "users={}", self.num_users());
        let _ = writeln!(meta, "items={}", self.num_items());
        let _ = writeln!(meta, "interactions={}", self.num_interactions());
        match self.seed {
            Some(s) => {
                let _ = writeln!(meta, "seed={s}");
            }
            None => meta.push_str("seed=none\n"),
        }
        write_file(&dir.join("meta.kv"), &meta)
    }

    pub fn load(dir: &Path) -> Result<InteractionCorpus> {
        let meta_path = dir.join("meta.kv");
        let meta = crate::config::read_kv(&meta_path)?;
        let get = |key: &str| {
            meta.get(key)
                .ok_or_else(|| Error::Data(format!("{}: missing key {key}", meta_path.display())))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad value for {key}", meta_path.display())))
        };
        let max_len = parse_usize("L")?;
        let seed = match get("seed")?.as_str() {
            "none" => None,
            s => Some(
                s.parse()
                    .map_err(|_| Error::Data("bad seed in meta.kv".into()))?,
            ),
        };
        let users = read_vocab(&dir.join("vocab_users.tsv"))?;
        let items = read_vocab(&dir.join("vocab_items.tsv"))?;
        if users.len() != parse_usize("users")? || items.len() != parse_usize("items")? {
            return Err(Error::Data("vocabulary sizes disagree with meta.kv".into()));
        }

        let seq_path = dir.join("sequences.tsv");
        let text = fs::read_to_string(&seq_path).map_err(|e| Error::io(&seq_path, e))?;
        let mut sequences = Vec::with_capacity(users.len());
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (idx, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&seq_path, n + 1, "missing tab"))?;
            if idx.parse::<usize>().ok() != Some(sequences.len() + 1) {
                return Err(Error::parse(
                    &seq_path,
                    n + 1,
                    "user indices must be consecutive from 1",
                ));
            }
            let seq = rest
                .split(' ')
                .map(|t| match t.parse::<usize>() {
                    Ok(v) if (1..=items.len()).contains(&v) => Ok(v),
                    _ => Err(Error::parse(
                        &seq_path,
                        n + 1,
                        format!("bad item index {t:?}"),
                    )),
                })
                .collect::<Result<Vec<usize>>>()?;
            if seq.len() < 3 {
                return Err(Error::parse(&seq_path, n + 1, "sequence shorter than 3"));
            }
            sequences.push(seq);
        }
        if sequences.len() != users.len() {
            return Err(Error::Data(
                "sequence count disagrees with user vocabulary".into(),
            ));
        }
        let user_lookup = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i + 1))
            .collect();
        let item_lookup = items
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i + 1))
            .collect();
        Ok(InteractionCorpus {
            users,
            items,
            user_lookup,
            item_lookup,
            sequences,
            max_len,
            seed,
        })
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_vocab(path: &Path, names: &[String]) -> Result<()> {
    let mut s = String::new();
    for (i, n) in names.iter().enumerate() {
        let _ = writeln!(s, "{}\t{}", i + 1, n);
    }
    write_file(path, &s)
}

fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (idx, name) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, n + 1, "missing tab"))?;
        if idx.parse::<usize>().ok() != Some(out.len() + 1) || name.is_empty() {
            return Err(Error::parse(
                path,
                n + 1,
                "indices must be consecutive from 1",
            ));
        }
        out.push(name.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use proptest::prelude::*;

    use super::*;

    fn rec(user: &str, item: &str, timestamp: i64) -> Interaction {
        Interaction {
            user: user.into(),
            item: item.into(),
            timestamp,
        }
    }

    fn parse(text: &str) -> Result<Vec<Interaction>> {
        parse_interactions(text, &PathBuf::from("mem"))
    }

    #[test]
    fn parses_records_in_order() {
        let recs = parse("u1\ti1\t10\nu1\ti2\t20\n").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!((recs[0].timestamp, recs[1].timestamp), (10, 20));
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn bad_timestamp_names_line() {
        let err = parse("u1\ti1\tabc\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse("u1\ti1\t1\nu1\ti2\n").unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn five_core_threshold() {
        let four: Vec<_> = (0..4).map(|t| rec("a", "x", t)).collect();
        assert!(five_core_filter(&four).is_empty());
        let five: Vec<_> = (0..5).map(|t| rec("a", "x", t)).collect();
        assert_eq!(five_core_filter(&five).len(), 5);
        let mut mixed: Vec<_> = (0..6).map(|t| rec("uA", "x", t)).collect();
        mixed.extend((0..3).map(|t| rec("uB", "y", t)));
        let kept = five_core_filter(&mixed);
        assert_eq!(kept.len(), 6);
        assert!(kept.iter().all(|r| r.user == "uA"));
    }

    #[test]
    fn sorts_by_time_with_stable_ties() {
        let recs = vec![
            rec("u", "c", 30),
            rec("u", "a", 10),
            rec("u", "b", 20),
            rec("u", "t1", 25),
            rec("u", "t2", 25),
        ];
        let corpus = build_corpus(&recs, 10).unwrap();
        let ids: Vec<&str> = corpus
            .sequence(1)
            .iter()
            .map(|&v| corpus.item_id(v))
            .collect();
        assert_eq!(ids, ["a", "b", "t1", "t2", "c"]);
        // first-occurrence indexing
        assert_eq!(corpus.item_index("c"), Some(1));
    }

    #[test]
    fn leave_one_out_split() {
        let recs: Vec<_> = ["a", "b", "c", "d", "e"]
            .iter()
            .enumerate()
            .map(|(t, v)| rec("u", v, t as i64))
            .collect();
        let corpus = build_corpus(&recs, 10).unwrap();
        let s = corpus.split(1);
        let name = |v: usize| corpus.item_id(v).to_string();
        assert_eq!(
            s.train.iter().map(|&v| name(v)).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
        assert_eq!((name(s.valid), name(s.test)), ("d".into(), "e".into()));
    }

    #[test]
    fn too_short_user_rejected() {
        let recs = vec![rec("u", "a", 1), rec("u", "b", 2)];
        assert!(matches!(build_corpus(&recs, 5), Err(Error::Data(_))));
    }

    #[test]
    fn pad_examples() {
        assert_eq!(
            pad_truncate(&[3, 7], 4),
            PaddedSequence {
                items: vec![0, 0, 3, 7],
                true_length: 2
            }
        );
        assert_eq!(pad_truncate(&[1, 2, 3, 4, 5], 3).items, vec![3, 4, 5]);
        let empty = pad_truncate(&[], 2);
        assert_eq!((empty.items, empty.true_length), (vec![0, 0], 0));
    }

    #[test]
    fn save_load_roundtrip() {
        let mut recs = Vec::new();
        for u in 0..4 {
            for t in 0..(5 + u) {
                recs.push(rec(
                    &format!("user{u}"),
                    &format!("item{}", (t * 7 + u) % 9),
                    t as i64,
                ));
            }
        }
        let mut corpus = build_corpus(&recs, 6).unwrap();
        corpus.set_seed(42);
        let dir = tempfile::tempdir().unwrap();
        corpus.save(dir.path()).unwrap();
        let back = InteractionCorpus::load(dir.path()).unwrap();
        assert_eq!(back, corpus);
    }

    fn arb_records() -> impl Strategy<Value = Vec<Interaction>> {
        prop::collection::vec((0u8..6, 0u8..10, 0i64..20), 0..80).prop_map(|v| {
            v.into_iter()
                .map(|(u, i, t)| rec(&format!("u{u}"), &format!("i{i}"), t))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn five_core_idempotent(recs in arb_records()) {
            let once = five_core_filter(&recs);
            prop_assert_eq!(five_core_filter(&once), once);
        }

        #[test]
        fn split_concatenates_to_sequence(recs in arb_records()) {
            let kept = five_core_filter(&recs);
            let corpus = build_corpus(&kept, 8).unwrap();
            for u in 1..=corpus.num_users() {
                let s = corpus.split(u);
                let mut joined = s.train.to_vec();
                joined.push(s.valid);
                joined.push(s.test);
                prop_assert_eq!(joined.as_slice(), corpus.sequence(u));
                prop_assert!(corpus.sequence(u).len() >= CORE_THRESHOLD);
                prop_assert!(corpus.sequence(u).iter().all(|&v| v >= 1 && v <= corpus.num_items()));
            }
        }

        #[test]
        fn pad_keeps_tail(seq in prop::collection::vec(1usize..50, 0..20), len in 1usize..12) {
            let p = pad_truncate(&seq, len);
            prop_assert_eq!(p.items.len(), len);
            let k = seq.len().min(len);
            prop_assert_eq!(p.true_length, k);
            prop_assert_eq!(&p.items[len - k..], &seq[seq.len() - k..]);
            prop_assert!(p.items[..len - k].iter().all(|&v| v == PAD));
        }
    }
}
