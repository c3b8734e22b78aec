//! Next-item, intra-sequence and inter-sequence losses and their weighted
//! total.
//!
//! All three losses are sums, not means. Negative terms follow
//! [`BceForm`]: next-item negatives always use `log(1 − σ(r))`; relation
//! negatives use `log σ(1 − f)` under [`BceForm::Literal`] and
//! `log(1 − σ(f))` under [`BceForm::Standard`].

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{BceForm, HyperParams};
use crate::corpus::{pad_truncate, PaddedSequence, PAD};
use crate::diffkernel::{Gradients, Tape, Var};
use crate::model::{encode, Bound, ModelParams, Pass};
use crate::relstore::RelationStore;

/// Positions `(i, j)` with `i < j` of one padded sequence, a relation and
/// whether `(s_i, s_j)` is related under it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IntraPair {
    pub i: usize,
    pub j: usize,
    pub relation: usize,
    pub label: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterSample {
    pub head: usize,
    pub relation: usize,
    pub positive: usize,
    pub negative: usize,
}

/// One training sequence with its per-position supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceExample {
    pub padded: PaddedSequence,
    /// Next item per position; `PAD` marks an unsupervised position.
    pub positives: Vec<usize>,
    /// Sampled negative per position; `PAD` where unsupervised.
    pub negatives: Vec<usize>,
    pub intra: Vec<IntraPair>,
    /// Seeds this sequence's dropout stream.
    pub seed: u64,
}

impl SequenceExample {
    pub fn supervised(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.positives.len()).filter(|&t| self.positives[t] != PAD && self.negatives[t] != PAD)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub sequences: Vec<SequenceExample>,
    pub inter: Vec<InterSample>,
}

/// Builds the training example for one train prefix: the input is
/// `train[..n-1]` (last `max_len` items), position `t` is supervised with
/// the item that follows it. Negatives avoid every item in `train`.
pub fn make_example<R: Rng + ?Sized>(
    train: &[usize],
    max_len: usize,
    num_items: usize,
    store: &RelationStore,
    intra_neg_cap: Option<usize>,
    rng: &mut R,
) -> SequenceExample {
    let n = train.len();
    let input: &[usize] = if n == 0 { &[] } else { &train[..n - 1] };
    let padded = pad_truncate(input, max_len);
    let first = padded.first_real();
    let offset = input.len() - padded.true_length;
    let seen: HashSet<usize> = train.iter().copied().collect();

    let mut positives = vec![PAD; max_len];
    let mut negatives = vec![PAD; max_len];
    for t in first..max_len {
        // input index of position t is offset + (t - first); its successor follows
        let target = train[offset + (t - first) + 1];
        positives[t] = target;
        negatives[t] = sample_unseen(&seen, num_items, rng).unwrap_or(PAD);
    }

    let mut intra = Vec::new();
    let mut negative_pairs = Vec::new();
    for i in first..max_len {
        for j in i + 1..max_len {
            for r in 0..store.num_relations() {
                let pair = IntraPair {
                    i,
                    j,
                    relation: r,
                    label: store.contains(padded.items[i], r, padded.items[j]),
                };
                if pair.label {
                    intra.push(pair);
                } else {
                    negative_pairs.push(pair);
                }
            }
        }
    }
    if let Some(cap) = intra_neg_cap {
        if negative_pairs.len() > cap {
            negative_pairs.shuffle(rng);
            negative_pairs.truncate(cap);
            negative_pairs.sort_by_key(|p| (p.i, p.j, p.relation));
        }
    }
    intra.extend(negative_pairs);
    intra.sort_by_key(|p| (p.i, p.j, p.relation));

    SequenceExample {
        padded,
        positives,
        negatives,
        intra,
        seed: rng.gen(),
    }
}

fn sample_unseen<R: Rng + ?Sized>(
    seen: &HashSet<usize>,
    num_items: usize,
    rng: &mut R,
) -> Option<usize> {
    if seen.len() >= num_items {
        return None;
    }
    for _ in 0..64 {
        let v = rng.gen_range(1..=num_items);
        if !seen.contains(&v) {
            return Some(v);
        }
    }
    let rest: Vec<usize> = (1..=num_items).filter(|v| !seen.contains(v)).collect();
    rest.choose(rng).copied()
}

/// Draws `budget` triples uniformly from all stored pairs; each gets a fresh
/// uniform negative. Heads with no negative are skipped.
pub fn sample_inter<R: Rng + ?Sized>(
    store: &RelationStore,
    budget: usize,
    rng: &mut R,
) -> Vec<InterSample> {
    let triples = store.triples();
    if triples.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(budget);
    for _ in 0..budget {
        let t = triples[rng.gen_range(0..triples.len())];
        if let Ok(negative) = store.sample_negative(t.head, t.relation, rng) {
            out.push(InterSample {
                head: t.head,
                relation: t.relation,
                positive: t.tail,
                negative,
            });
        }
    }
    out
}

fn negative_log_term(tape: &mut Tape, scores: Var, form: BceForm) -> Var {
    let shifted = match form {
        BceForm::Literal => tape.affine(scores, 1.0, -1.0),
        BceForm::Standard => tape.scale(scores, -1.0),
    };
    tape.log_sigmoid(shifted)
}

/// `−Σ_t [log σ(O_t·M[j⁺]) + log(1 − σ(O_t·M[j⁻]))]` over supervised
/// positions. `outputs[k]` is the encoded `L×d` matrix of sequence `k`.
pub fn pred_loss(tape: &mut Tape, bound: &Bound, outputs: &[Var], batch: &Batch) -> Option<Var> {
    let mut terms = Vec::new();
    for (seq, &out) in batch.sequences.iter().zip(outputs) {
        let positions: Vec<usize> = seq.supervised().collect();
        if positions.is_empty() {
            continue;
        }
        let pos_items: Vec<usize> = positions.iter().map(|&t| seq.positives[t]).collect();
        let neg_items: Vec<usize> = positions.iter().map(|&t| seq.negatives[t]).collect();
        let o = tape.gather_rows(out, &positions);
        let mp = tape.gather_rows(bound.item_emb(), &pos_items);
        let mn = tape.gather_rows(bound.item_emb(), &neg_items);
        let sp = tape.row_dot(o, mp);
        let sn = tape.row_dot(o, mn);
        let lp = tape.log_sigmoid(sp);
        let sn = tape.scale(sn, -1.0);
        let ln = tape.log_sigmoid(sn);
        let a = tape.sum(lp);
        let b = tape.sum(ln);
        terms.push(tape.add(a, b));
    }
    let total = tape.add_all(&terms)?;
    Some(tape.scale(total, -1.0))
}

/// `−Σ_{i<j} Σ_r [y log σ(f_r) + (1 − y) log σ(1 − f_r)]` over each
/// sequence's listed pairs, with `f_r` on item embeddings.
pub fn intra_loss(tape: &mut Tape, bound: &Bound, batch: &Batch, form: BceForm) -> Option<Var> {
    let mut terms = Vec::new();
    for seq in &batch.sequences {
        if seq.intra.is_empty() {
            continue;
        }
        let n = seq.padded.len();
        let x = tape.gather_rows(bound.item_emb(), &seq.padded.items);
        for r in 0..bound.num_relations() {
            let mut pos_w = vec![0.0; n * n];
            let mut neg_w = vec![0.0; n * n];
            let mut any = false;
            for p in seq.intra.iter().filter(|p| p.relation == r) {
                debug_assert!(p.i < p.j && !seq.padded.is_padding(p.i));
                if p.label {
                    pos_w[p.i * n + p.j] += 1.0;
                } else {
                    neg_w[p.i * n + p.j] += 1.0;
                }
                any = true;
            }
            if !any {
                continue;
            }
            let proj = tape.matmul(x, bound.relation_matrix(r));
            let f = tape.matmul_nt(proj, proj);
            let lp = tape.log_sigmoid(f);
            let ln = negative_log_term(tape, f, form);
            let a = tape.weighted_sum(lp, pos_w);
            let b = tape.weighted_sum(ln, neg_w);
            terms.push(tape.add(a, b));
        }
    }
    let total = tape.add_all(&terms)?;
    Some(tape.scale(total, -1.0))
}

/// `−Σ [log σ(f_r(h, t⁺)) + log σ(1 − f_r(h, t⁻))]`
pub fn inter_loss(
    tape: &mut Tape,
    bound: &Bound,
    samples: &[InterSample],
    form: BceForm,
) -> Option<Var> {
    let mut terms = Vec::new();
    for r in 0..bound.num_relations() {
        let group: Vec<&InterSample> = samples.iter().filter(|s| s.relation == r).collect();
        if group.is_empty() {
            continue;
        }
        let heads: Vec<usize> = group.iter().map(|s| s.head).collect();
        let pos: Vec<usize> = group.iter().map(|s| s.positive).collect();
        let neg: Vec<usize> = group.iter().map(|s| s.negative).collect();
        let w = bound.relation_matrix(r);
        let project = |tape: &mut Tape, items: &[usize]| {
            let rows = tape.gather_rows(bound.item_emb(), items);
            tape.matmul(rows, w)
        };
        let h = project(tape, &heads);
        let tp = project(tape, &pos);
        let tn = project(tape, &neg);
        let fp = tape.row_dot(h, tp);
        let fn_ = tape.row_dot(h, tn);
        let lp = tape.log_sigmoid(fp);
        let ln = negative_log_term(tape, fn_, form);
        let a = tape.sum(lp);
        let b = tape.sum(ln);
        terms.push(tape.add(a, b));
    }
    let total = tape.add_all(&terms)?;
    Some(tape.scale(total, -1.0))
}

/// `‖Θ‖₂²` over every free parameter entry.
pub fn l2_penalty(tape: &mut Tape, bound: &Bound, params: &ModelParams) -> Option<Var> {
    let terms: Vec<Var> = params
        .set()
        .iter()
        .map(|(id, p)| tape.sum_squares(bound.var(id), p.pinned_rows))
        .collect();
    tape.add_all(&terms)
}

/// Weights of the total objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub bce: BceForm,
}

impl LossWeights {
    pub fn from_hyper(h: &HyperParams) -> Self {
        LossWeights {
            alpha: h.alpha,
            beta: h.beta,
            lambda: h.lambda,
            bce: h.bce_form,
        }
    }
}

/// Component values of one loss evaluation. A term whose weight is zero
/// is not evaluated and reported as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossValues {
    pub total: f64,
    pub pred: f64,
    pub intra: f64,
    pub inter: f64,
    pub l2: f64,
}

impl LossValues {
    pub fn add(&mut self, other: &LossValues) {
        self.total += other.total;
        self.pred += other.pred;
        self.intra += other.intra;
        self.inter += other.inter;
        self.l2 += other.l2;
    }
}

/// Records `L_pred + α·L_intra + β·L_inter + λ·‖Θ‖²` on `tape`.
///
/// `include_inter_and_l2 = false` leaves out the batch-level terms so that
/// shards of one batch can be summed without double counting.
pub fn record_total(
    tape: &mut Tape,
    params: &ModelParams,
    pass: &Pass,
    weights: &LossWeights,
    batch: &Batch,
    include_inter_and_l2: bool,
) -> (Option<Var>, LossValues) {
    let bound = params.bind(tape);
    let outputs: Vec<Var> = batch
        .sequences
        .iter()
        .map(|seq| {
            let mut rng = ChaCha8Rng::seed_from_u64(seq.seed);
            encode(tape, &bound, &seq.padded, pass, &mut rng)
        })
        .collect();
    let mut values = LossValues::default();
    let mut parts = Vec::new();
    if let Some(p) = pred_loss(tape, &bound, &outputs, batch) {
        values.pred = tape.value(p).item();
        parts.push(p);
    }
    if weights.alpha != 0.0 {
        if let Some(l) = intra_loss(tape, &bound, batch, weights.bce) {
            values.intra = tape.value(l).item();
            parts.push(tape.scale(l, weights.alpha));
        }
    }
    if include_inter_and_l2 && weights.beta != 0.0 {
        if let Some(l) = inter_loss(tape, &bound, &batch.inter, weights.bce) {
            values.inter = tape.value(l).item();
            parts.push(tape.scale(l, weights.beta));
        }
    }
    if include_inter_and_l2 && weights.lambda != 0.0 {
        if let Some(l) = l2_penalty(tape, &bound, params) {
            values.l2 = tape.value(l).item();
            parts.push(tape.scale(l, weights.lambda));
        }
    }
    let total = tape.add_all(&parts);
    values.total = total.map_or(0.0, |t| tape.value(t).item());
    (total, values)
}

/// Evaluates the total loss and its gradient (padding row zeroed).
pub fn loss_and_grad(
    params: &ModelParams,
    pass: &Pass,
    weights: &LossWeights,
    batch: &Batch,
) -> (LossValues, Gradients) {
    let mut tape = Tape::new();
    let (total, values) = record_total(&mut tape, params, pass, weights, batch, true);
    let mut grads = total.map(|t| tape.backward(t)).unwrap_or_default();
    grads.zero_pinned(params.set());
    (values, grads)
}

/// Total loss only.
pub fn loss_value(
    params: &ModelParams,
    pass: &Pass,
    weights: &LossWeights,
    batch: &Batch,
) -> LossValues {
    let mut tape = Tape::new();
    record_total(&mut tape, params, pass, weights, batch, true).1
}

/// Like [`loss_and_grad`], with sequences split into `shards` contiguous
/// groups evaluated on separate threads and summed in shard order.
pub fn loss_and_grad_sharded(
    params: &ModelParams,
    pass: &Pass,
    weights: &LossWeights,
    batch: &Batch,
    shards: usize,
) -> (LossValues, Gradients) {
    if shards <= 1 || batch.sequences.len() < 2 {
        return loss_and_grad(params, pass, weights, batch);
    }
    let per = batch.sequences.len().div_ceil(shards);
    let chunks: Vec<&[SequenceExample]> = batch.sequences.chunks(per).collect();
    let results: Vec<(LossValues, Gradients)> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .enumerate()
            .map(|(k, chunk)| {
                scope.spawn(move || {
                    let sub = Batch {
                        sequences: chunk.to_vec(),
                        inter: if k == 0 {
                            batch.inter.clone()
                        } else {
                            Vec::new()
                        },
                    };
                    let mut tape = Tape::new();
                    let (total, values) =
                        record_total(&mut tape, params, pass, weights, &sub, k == 0);
                    let grads = total.map(|t| tape.backward(t)).unwrap_or_default();
                    (values, grads)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("loss shard panicked"))
            .collect()
    });
    let mut values = LossValues::default();
    let mut grads = Gradients::new();
    for (v, g) in results {
        values.add(&v);
        grads.merge(g);
    }
    grads.zero_pinned(params.set());
    (values, grads)
}
