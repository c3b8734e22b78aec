use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_corpus, Interaction, InteractionCorpus};
use crate::error::{Error, Result};
use crate::relstore::RelationStore;

/// Shape of the generated relation graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RelationGraph {
    /// `pairs_per_relation` random ordered pairs per relation.
    Random { pairs_per_relation: usize },
    /// Relation 0 links every item to its successor, wrapping around; other
    /// relations are empty.
    Cycle,
    /// Items fall into `clusters` contiguous blocks; each relation gets
    /// `pairs_per_relation` random ordered pairs inside a block.
    Clustered {
        clusters: usize,
        pairs_per_relation: usize,
    },
}

/// Parameters of a synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub relations: usize,
    pub min_seq_len: usize,
    pub max_seq_len: usize,
    pub graph: RelationGraph,
    /// Probability that the next item is drawn from the previous item's
    /// relation neighbours.
    pub p_rel: f64,
    /// Padded length stored with the corpus.
    pub max_len: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 50,
            items: 30,
            relations: 2,
            min_seq_len: 5,
            max_seq_len: 12,
            graph: RelationGraph::Random {
                pairs_per_relation: 40,
            },
            p_rel: 0.0,
            max_len: 10,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("infeasible synthetic spec: {m}")));
        if self.users == 0 {
            return bad("users must be positive");
        }
        if self.items < 2 {
            return bad("need at least 2 items");
        }
        if self.min_seq_len < 3 || self.max_seq_len < self.min_seq_len {
            return bad("need 3 <= min_seq_len <= max_seq_len");
        }
        if !(0.0..=1.0).contains(&self.p_rel) {
            return bad("p_rel must lie in [0, 1]");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        let pairs = match self.graph {
            RelationGraph::Random { pairs_per_relation } => {
                if pairs_per_relation > self.items * (self.items - 1) {
                    return bad("more pairs per relation than ordered item pairs");
                }
                pairs_per_relation * self.relations
            }
            RelationGraph::Cycle => {
                if self.relations == 0 {
                    return bad("cycle graph needs at least one relation");
                }
                self.items
            }
            RelationGraph::Clustered {
                clusters,
                pairs_per_relation,
            } => {
                if clusters == 0 || clusters > self.items / 2 {
                    return bad("clusters must lie in 1..=items/2");
                }
                let within: usize = (0..clusters)
                    .map(|c| cluster_range(self.items, clusters, c).len())
                    .map(|s| s * (s - 1))
                    .sum();
                if pairs_per_relation > within {
                    return bad("more pairs per relation than ordered pairs inside clusters");
                }
                pairs_per_relation * self.relations
            }
        };
        if self.p_rel > 0.0 && pairs == 0 {
            return bad("p_rel > 0 but the relation graph is empty");
        }
        Ok(())
    }

    /// Parses `key=value` entries; unknown keys are rejected.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<SynthSpec> {
        let mut spec = SynthSpec::default();
        let mut pairs = match spec.graph {
            RelationGraph::Random { pairs_per_relation } => pairs_per_relation,
            RelationGraph::Clustered {
                pairs_per_relation, ..
            } => pairs_per_relation,
            RelationGraph::Cycle => 0,
        };
        let mut graph = "random".to_string();
        let mut clusters = 0;
        for (k, v) in kv {
            let num = || {
                v.parse::<usize>().map_err(|_| {
                    Error::Config(format!("{k}: expected a non-negative integer, got {v:?}"))
                })
            };
            match k.as_str() {
                "users" => spec.users = num()?,
                "items" => spec.items = num()?,
                "relations" => spec.relations = num()?,
                "min_seq_len" => spec.min_seq_len = num()?,
                "max_seq_len" => spec.max_seq_len = num()?,
                "pairs_per_relation" => pairs = num()?,
                "clusters" => clusters = num()?,
                "max_len" => spec.max_len = num()?,
                "p_rel" => {
                    spec.p_rel = v
                        .parse()
                        .map_err(|_| Error::Config(format!("p_rel: bad number {v:?}")))?
                }
                "graph" => graph = v.clone(),
                _ => return Err(Error::Config(format!("unknown synthetic spec key {k:?}"))),
            }
        }
        spec.graph = match graph.as_str() {
            "random" => RelationGraph::Random {
                pairs_per_relation: pairs,
            },
            "cycle" => RelationGraph::Cycle,
            "clustered" => RelationGraph::Clustered {
                clusters,
                pairs_per_relation: pairs,
            },
            _ => {
                return Err(Error::Config(format!(
                    "graph: expected random|cycle|clustered, got {graph:?}"
                )))
            }
        };
        Ok(spec)
    }
}

/// Raw item ids of block `c` when `items` are split into `clusters`
/// near-equal contiguous blocks.
fn cluster_range(items: usize, clusters: usize, c: usize) -> std::ops::Range<usize> {
    (c * items / clusters)..((c + 1) * items / clusters)
}

/// Generates a corpus and its relation store, deterministic in `seed`.
///
/// Item `i{k}` and user `u{k}` ids are raw names; the corpus re-indexes
/// them in first-occurrence order. Relation triples whose items never
/// occur in any sequence are dropped with the vocabulary.
pub fn generate_synthetic(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(InteractionCorpus, RelationStore)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.items;

    // raw item ids are 0-based here
    let mut raw_pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); spec.relations];
    match spec.graph {
        RelationGraph::Random { pairs_per_relation } => {
            for pairs in raw_pairs.iter_mut() {
                let mut seen = std::collections::HashSet::new();
                while pairs.len() < pairs_per_relation {
                    let h = rng.gen_range(0..n);
                    let t = rng.gen_range(0..n);
                    if h != t && seen.insert((h, t)) {
                        pairs.push((h, t));
                    }
                }
            }
        }
        RelationGraph::Cycle => {
            raw_pairs[0] = (0..n).map(|i| (i, (i + 1) % n)).collect();
        }
        RelationGraph::Clustered {
            clusters,
            pairs_per_relation,
        } => {
            for pairs in raw_pairs.iter_mut() {
                let mut seen = std::collections::HashSet::new();
                while pairs.len() < pairs_per_relation {
                    let block = cluster_range(n, clusters, rng.gen_range(0..clusters));
                    let h = rng.gen_range(block.clone());
                    let t = rng.gen_range(block);
                    if h != t && seen.insert((h, t)) {
                        pairs.push((h, t));
                    }
                }
            }
        }
    }
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
    for pairs in &raw_pairs {
        for &(h, t) in pairs {
            neighbours[h].push(t);
        }
    }

    let mut records = Vec::new();
    for u in 0..spec.users {
        let len = rng.gen_range(spec.min_seq_len..=spec.max_seq_len);
        let mut prev = rng.gen_range(0..n);
        for t in 0..len {
            if t > 0 {
                let related = &neighbours[prev];
                prev = if !related.is_empty() && rng.gen::<f64>() < spec.p_rel {
                    *related.choose(&mut rng).expect("non-empty")
                } else {
                    rng.gen_range(0..n)
                };
            }
            records.push(Interaction {
                user: format!("u{u}"),
                item: format!("i{prev}"),
                timestamp: t as i64,
            });
        }
    }

    let mut corpus = build_corpus(&records, spec.max_len)?;
    corpus.set_seed(seed);
    let mut store = RelationStore::new(corpus.num_items());
    for (r, pairs) in raw_pairs.iter().enumerate() {
        let rel = store.relation_index(&format!("r{r}"));
        for &(h, t) in pairs {
            match (
                corpus.item_index(&format!("i{h}")),
                corpus.item_index(&format!("i{t}")),
            ) {
                (Some(h), Some(t)) => {
                    store.insert(h, rel, t);
                }
                _ => store.record_unknown(),
            }
        }
    }
    Ok((corpus, store))
}
