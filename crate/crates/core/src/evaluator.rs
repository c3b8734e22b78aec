//! Full-catalog ranking metrics and per-bucket breakdowns.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::HyperParams;
use crate::corpus::{pad_truncate, InteractionCorpus};
use crate::diffkernel::Tape;
use crate::error::{Error, Result};
use crate::model::{encode, last_output, next_item_scores, ModelParams, Pass};

/// Bucket edges used when none are given.
pub const DEFAULT_EDGES: [usize; 3] = [5, 10, 20];

/// 1-based rank of `target`; ties are broken by ascending item index.
pub fn rank_of_target(scores: &[f64], target: usize) -> usize {
    assert!(
        target != 0 && target < scores.len(),
        "target {target} out of range"
    );
    let s = scores[target];
    let mut rank = 1;
    for (v, &x) in scores.iter().enumerate() {
        if x > s || (x == s && v < target) {
            rank += 1;
        }
    }
    rank
}

pub fn recall_at(rank: usize, n: usize) -> f64 {
    if rank <= n {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at(rank: usize, n: usize) -> f64 {
    if rank <= n {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn mrr_of(rank: usize) -> f64 {
    1.0 / rank as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Valid,
    Test,
}

impl FromStr for EvalSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(EvalSplit::Valid),
            "test" => Ok(EvalSplit::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (valid|test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    SeqLength,
    ItemPopularity,
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq_length" => Ok(Axis::SeqLength),
            "item_popularity" => Ok(Axis::ItemPopularity),
            _ => Err(Error::Config(format!(
                "unknown axis {s:?} (seq_length|item_popularity)"
            ))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::SeqLength => "seq_length",
            Axis::ItemPopularity => "item_popularity",
        })
    }
}

/// One evaluated user.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UserRank {
    pub user: usize,
    pub rank: usize,
    pub train_len: usize,
    /// Training interactions of the target item.
    pub target_popularity: usize,
}

/// Means over evaluated users.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub users: usize,
    pub recall_5: f64,
    pub recall_10: f64,
    pub ndcg_5: f64,
    pub ndcg_10: f64,
    pub mrr: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Result<Metrics> {
        if ranks.is_empty() {
            return Err(Error::Data("no users to evaluate".into()));
        }
        let n = ranks.len() as f64;
        let mean = |f: &dyn Fn(usize) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>() / n;
        Ok(Metrics {
            users: ranks.len(),
            recall_5: mean(&|r| recall_at(r, 5)),
            recall_10: mean(&|r| recall_at(r, 10)),
            ndcg_5: mean(&|r| ndcg_at(r, 5)),
            ndcg_10: mean(&|r| ndcg_at(r, 10)),
            mrr: mean(&|r| mrr_of(r)),
        })
    }

    fn write_kv(&self, out: &mut String, prefix: &str) {
        let _ = writeln!(out, "{prefix}users={}", self.users);
        let _ = writeln!(out, "{prefix}recall@5={:.6}", self.recall_5);
        let _ = writeln!(out, "{prefix}recall@10={:.6}", self.recall_10);
        let _ = writeln!(out, "{prefix}ndcg@5={:.6}", self.ndcg_5);
        let _ = writeln!(out, "{prefix}ndcg@10={:.6}", self.ndcg_10);
        let _ = writeln!(out, "{prefix}mrr={:.6}", self.mrr);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bucket {
    pub label: String,
    /// Inclusive bounds; `hi = None` is unbounded.
    pub lo: usize,
    pub hi: Option<usize>,
    pub count: usize,
    pub metrics: Option<Metrics>,
}

impl Bucket {
    pub fn contains(&self, v: usize) -> bool {
        v >= self.lo && self.hi.is_none_or(|h| v <= h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankingReport {
    pub split: EvalSplit,
    pub filter_seen: bool,
    pub metrics: Metrics,
    pub by_seq_length: Vec<Bucket>,
    pub by_item_popularity: Vec<Bucket>,
}

impl RankingReport {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let split = match self.split {
            EvalSplit::Valid => "valid",
            EvalSplit::Test => "test",
        };
        let _ = writeln!(s, "split={split}");
        let _ = writeln!(s, "filter_seen={}", self.filter_seen);
        self.metrics.write_kv(&mut s, "");
        for (axis, buckets) in [
            (Axis::SeqLength, &self.by_seq_length),
            (Axis::ItemPopularity, &self.by_item_popularity),
        ] {
            for b in buckets {
                let prefix = format!("{axis}.{}.", b.label);
                match &b.metrics {
                    Some(m) => m.write_kv(&mut s, &prefix),
                    None => {
                        let _ = writeln!(s, "{prefix}users=0");
                    }
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn buckets(&self, axis: Axis) -> &[Bucket] {
        match axis {
            Axis::SeqLength => &self.by_seq_length,
            Axis::ItemPopularity => &self.by_item_popularity,
        }
    }
}

/// `bucket,lo,hi,count,recall@5,…` rows; empty buckets have blank metrics.
pub fn buckets_to_csv(buckets: &[Bucket]) -> String {
    let mut s = String::from("bucket,lo,hi,count,recall@5,recall@10,ndcg@5,ndcg@10,mrr\n");
    for b in buckets {
        let hi = b.hi.map_or(String::new(), |h| h.to_string());
        let _ = write!(s, "{},{},{},{}", b.label, b.lo, hi, b.count);
        match &b.metrics {
            Some(m) => {
                let _ = writeln!(
                    s,
                    ",{:.6},{:.6},{:.6},{:.6},{:.6}",
                    m.recall_5, m.recall_10, m.ndcg_5, m.ndcg_10, m.mrr
                );
            }
            None => s.push_str(",,,,,\n"),
        }
    }
    s
}

/// Buckets `≤e₀`, `e₀+1..=e₁`, …, `>e_last`.
pub fn make_buckets(edges: &[usize]) -> Result<Vec<Bucket>> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "bucket edges {edges:?} must be strictly increasing"
        )));
    }
    let mut out = Vec::with_capacity(edges.len() + 1);
    let mut lo = 0;
    for &e in edges {
        out.push(Bucket {
            label: if lo == 0 {
                format!("le{e}")
            } else {
                format!("{lo}-{e}")
            },
            lo,
            hi: Some(e),
            count: 0,
            metrics: None,
        });
        lo = e + 1;
    }
    out.push(Bucket {
        label: if lo == 0 {
            "all".to_string()
        } else {
            format!("gt{}", lo - 1)
        },
        lo,
        hi: None,
        count: 0,
        metrics: None,
    });
    Ok(out)
}

pub fn breakdown(ranks: &[UserRank], axis: Axis, edges: &[usize]) -> Result<Vec<Bucket>> {
    let mut buckets = make_buckets(edges)?;
    for b in &mut buckets {
        let members: Vec<usize> = ranks
            .iter()
            .filter(|u| {
                b.contains(match axis {
                    Axis::SeqLength => u.train_len,
                    Axis::ItemPopularity => u.target_popularity,
                })
            })
            .map(|u| u.rank)
            .collect();
        b.count = members.len();
        b.metrics = Metrics::from_ranks(&members).ok();
    }
    Ok(buckets)
}

/// Options of [`evaluate`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub split: EvalSplit,
    pub filter_seen: bool,
    pub edges: Vec<usize>,
    pub threads: usize,
}

impl EvalOptions {
    pub fn new(split: EvalSplit) -> Self {
        EvalOptions {
            split,
            filter_seen: false,
            edges: DEFAULT_EDGES.to_vec(),
            threads: 1,
        }
    }
}

/// Scores of every item after `history` (dropout off).
pub fn score_history(params: &ModelParams, hyper: &HyperParams, history: &[usize]) -> Vec<f64> {
    let padded = pad_truncate(history, params.dims().max_len);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = encode(&mut tape, &bound, &padded, &Pass::eval(hyper), &mut rng);
    next_item_scores(&last_output(&tape, out), params)
}

fn rank_user(
    params: &ModelParams,
    hyper: &HyperParams,
    corpus: &InteractionCorpus,
    popularity: &[usize],
    user: usize,
    split: EvalSplit,
    filter_seen: bool,
) -> UserRank {
    let sp = corpus.split(user);
    let (history, target): (Vec<usize>, usize) = match split {
        EvalSplit::Valid => (sp.train.to_vec(), sp.valid),
        EvalSplit::Test => {
            let mut h = sp.train.to_vec();
            h.push(sp.valid);
            (h, sp.test)
        }
    };
    let mut scores = score_history(params, hyper, &history);
    if filter_seen {
        for &v in &history {
            if v != target {
                scores[v] = f64::NEG_INFINITY;
            }
        }
    }
    UserRank {
        user,
        rank: rank_of_target(&scores, target),
        train_len: sp.train.len(),
        target_popularity: popularity[target],
    }
}

/// Per-user ranks in user order, computed on `threads` workers.
pub fn user_ranks(
    params: &ModelParams,
    hyper: &HyperParams,
    corpus: &InteractionCorpus,
    split: EvalSplit,
    filter_seen: bool,
    threads: usize,
) -> Vec<UserRank> {
    let popularity = corpus.train_popularity();
    let users: Vec<usize> = (1..=corpus.num_users()).collect();
    if threads <= 1 || users.len() < 2 {
        return users
            .iter()
            .map(|&u| rank_user(params, hyper, corpus, &popularity, u, split, filter_seen))
            .collect();
    }
    let per = users.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = users
            .chunks(per)
            .map(|chunk| {
                let popularity = &popularity;
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|&u| {
                            rank_user(params, hyper, corpus, popularity, u, split, filter_seen)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    })
}

pub fn evaluate(
    params: &ModelParams,
    hyper: &HyperParams,
    corpus: &InteractionCorpus,
    opts: &EvalOptions,
) -> Result<RankingReport> {
    let ranks = user_ranks(
        params,
        hyper,
        corpus,
        opts.split,
        opts.filter_seen,
        opts.threads,
    );
    report_from_ranks(&ranks, opts)
}

pub fn report_from_ranks(ranks: &[UserRank], opts: &EvalOptions) -> Result<RankingReport> {
    let all: Vec<usize> = ranks.iter().map(|u| u.rank).collect();
    Ok(RankingReport {
        split: opts.split,
        filter_seen: opts.filter_seen,
        metrics: Metrics::from_ranks(&all)?,
        by_seq_length: breakdown(ranks, Axis::SeqLength, &opts.edges)?,
        by_item_popularity: breakdown(ranks, Axis::ItemPopularity, &opts.edges)?,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn rank_examples() {
        let s = [f64::NEG_INFINITY, 0.1, 0.9, 0.3];
        assert_eq!(rank_of_target(&s, 2), 1);
        assert_eq!(rank_of_target(&s, 1), 3);
        let flat = [f64::NEG_INFINITY, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(rank_of_target(&flat, 1), 1);
        assert_eq!(rank_of_target(&flat, 4), 4);
    }

    #[test]
    fn metric_examples() {
        assert_eq!((recall_at(1, 5), ndcg_at(1, 5), mrr_of(1)), (1.0, 1.0, 1.0));
        assert!((ndcg_at(3, 5) - 0.5).abs() < 1e-12);
        assert!((mrr_of(3) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!((recall_at(7, 5), ndcg_at(7, 5)), (0.0, 0.0));
        assert!((ndcg_at(7, 10) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_users_is_an_error() {
        assert!(Metrics::from_ranks(&[]).is_err());
    }

    #[test]
    fn buckets_layout() {
        let b = make_buckets(&[5, 10, 20]).unwrap();
        let labels: Vec<_> = b.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, ["le5", "6-10", "11-20", "gt20"]);
        assert!(b[0].contains(5) && b[1].contains(6) && b[3].contains(21));
        assert!(make_buckets(&[5, 5]).is_err());
        assert_eq!(make_buckets(&[]).unwrap()[0].label, "all");
    }

    fn users(ranks: &[(usize, usize)]) -> Vec<UserRank> {
        ranks
            .iter()
            .enumerate()
            .map(|(u, &(rank, len))| UserRank {
                user: u,
                rank,
                train_len: len,
                target_popularity: len * 2,
            })
            .collect()
    }

    #[test]
    fn single_bucket_equals_global() {
        let us = users(&[(1, 3), (4, 8), (12, 30)]);
        let b = breakdown(&us, Axis::SeqLength, &[]).unwrap();
        let global = Metrics::from_ranks(&[1, 4, 12]).unwrap();
        assert_eq!(b[0].metrics.unwrap(), global);
    }

    #[test]
    fn two_bucket_partition() {
        let us = users(&[(1, 3), (4, 8), (12, 30), (2, 5)]);
        let b = breakdown(&us, Axis::SeqLength, &[5]).unwrap();
        assert_eq!(b[0].metrics.unwrap(), Metrics::from_ranks(&[1, 2]).unwrap());
        assert_eq!(
            b[1].metrics.unwrap(),
            Metrics::from_ranks(&[4, 12]).unwrap()
        );
        let p = breakdown(&us, Axis::ItemPopularity, &DEFAULT_EDGES).unwrap();
        assert_eq!(p.iter().map(|b| b.count).sum::<usize>(), 4);
    }

    #[test]
    fn csv_has_bucket_rows() {
        let us = users(&[(1, 3), (4, 8)]);
        let csv = buckets_to_csv(&breakdown(&us, Axis::SeqLength, &DEFAULT_EDGES).unwrap());
        assert_eq!(csv.lines().count(), 5);
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("le5,0,5,1,1.000000"));
        assert!(csv.lines().nth(3).unwrap().ends_with(",,,,,"));
    }

    proptest! {
        #[test]
        fn rank_matches_sort(scores in proptest::collection::vec(-3i32..3, 10), t in 1usize..10) {
            let mut s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
            s[0] = f64::NEG_INFINITY;
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
            let expected = order.iter().position(|&v| v == t).unwrap() + 1;
            prop_assert_eq!(rank_of_target(&s, t), expected);
        }

        #[test]
        fn per_user_ordering(rank in 1usize..200) {
            for n in [5, 10] {
                prop_assert!(recall_at(rank, n) >= ndcg_at(rank, n));
            }
            prop_assert!(ndcg_at(rank, 10) >= ndcg_at(rank, 5));
            prop_assert!(mrr_of(rank) <= 1.0);
        }
    }
}
