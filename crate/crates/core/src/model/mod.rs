//! The multi-relational self-attention sequence encoder.
//!
//! Attention logits of every block are
//!
//! ```text
//! (Q_h K_hᵀ + Σ_r w_r · X W_r W_rᵀ Xᵀ) / √d
//! ```
//!
//! where `X` is the block's attention input. The relation term is computed
//! once per block on the full `d`-dimensional input and added identically to
//! every head. With all `w_r = 0` the block reduces to plain causal
//! self-attention.

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{HyperParams, ResidualMode};
use crate::corpus::{PaddedSequence, PAD};
use crate::diffkernel::{ParamId, ParamSet, Tape, Tensor, Var, LAYER_NORM_EPS};

/// Sizes that fix the parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub num_items: usize,
    pub num_relations: usize,
    pub max_len: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub heads: usize,
}

impl ModelDims {
    pub fn new(hyper: &HyperParams, num_items: usize, num_relations: usize) -> Self {
        ModelDims {
            num_items,
            num_relations,
            max_len: hyper.max_len,
            dim: hyper.dim,
            ffn_dim: hyper.ffn_dim,
            layers: hyper.layers,
            heads: hyper.heads,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerIds {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelationIds {
    /// `W_r`, d×d
    pub matrix: ParamId,
    /// `w_r`, scalar
    pub weight: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub item_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<LayerIds>,
    pub relations: Vec<RelationIds>,
}

/// All learnable tensors. Row 0 of the item embedding (padding) is pinned
/// at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    set: ParamSet,
    layout: Layout,
    dims: ModelDims,
}

impl ModelParams {
    /// Zero-filled parameters with layer-norm gains at one.
    pub fn zeros(dims: ModelDims) -> Self {
        let d = dims.dim;
        let mut set = ParamSet::new();
        let item_emb = set.push("item_emb", Tensor::zeros(vec![dims.num_items + 1, d]), 1);
        let pos_emb = set.push("pos_emb", Tensor::zeros(vec![dims.max_len, d]), 0);
        let mut layers = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let mut add = |name: &str, t: Tensor| set.push(format!("layer{l}.{name}"), t, 0);
            layers.push(LayerIds {
                w_q: add("w_q", Tensor::zeros(vec![d, d])),
                w_k: add("w_k", Tensor::zeros(vec![d, d])),
                w_v: add("w_v", Tensor::zeros(vec![d, d])),
                ln1_gamma: add("ln1.gamma", Tensor::filled(vec![d], 1.0)),
                ln1_beta: add("ln1.beta", Tensor::zeros(vec![d])),
                ln2_gamma: add("ln2.gamma", Tensor::filled(vec![d], 1.0)),
                ln2_beta: add("ln2.beta", Tensor::zeros(vec![d])),
                ffn_w1: add("ffn.w1", Tensor::zeros(vec![d, dims.ffn_dim])),
                ffn_b1: add("ffn.b1", Tensor::zeros(vec![dims.ffn_dim])),
                ffn_w2: add("ffn.w2", Tensor::zeros(vec![dims.ffn_dim, d])),
                ffn_b2: add("ffn.b2", Tensor::zeros(vec![d])),
            });
        }
        let relations = (0..dims.num_relations)
            .map(|r| RelationIds {
                matrix: set.push(format!("rel{r}.matrix"), Tensor::zeros(vec![d, d]), 0),
                weight: set.push(format!("rel{r}.weight"), Tensor::scalar(0.0), 0),
            })
            .collect();
        ModelParams {
            set,
            layout: Layout {
                item_emb,
                pos_emb,
                layers,
                relations,
            },
            dims,
        }
    }

    /// Embeddings, projections, FFN and relation matrices ~ N(0, std²);
    /// biases and `w_r` zero; layer-norm gains one.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, std: f64, rng: &mut R) -> Self {
        let mut p = ModelParams::zeros(dims);
        let normal = Normal::new(0.0, std).expect("valid std");
        let mut random = vec![p.layout.item_emb, p.layout.pos_emb];
        for l in &p.layout.layers {
            random.extend([l.w_q, l.w_k, l.w_v, l.ffn_w1, l.ffn_w2]);
        }
        random.extend(p.layout.relations.iter().map(|r| r.matrix));
        for id in random {
            let param = p.set.get_mut(id);
            let skip = param.pinned_len();
            for v in &mut param.value.data_mut()[skip..] {
                *v = normal.sample(rng);
            }
        }
        p
    }

    pub(crate) fn from_parts(set: ParamSet, dims: ModelDims) -> Option<Self> {
        let reference = ModelParams::zeros(dims);
        if set.len() != reference.set.len() {
            return None;
        }
        for ((_, a), (_, b)) in set.iter().zip(reference.set.iter()) {
            if a.name != b.name
                || a.value.shape() != b.value.shape()
                || a.pinned_rows != b.pinned_rows
            {
                return None;
            }
        }
        Some(ModelParams {
            set,
            layout: reference.layout,
            dims,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    pub fn item_embeddings(&self) -> &Tensor {
        self.set.value(self.layout.item_emb)
    }

    pub fn relation_matrix(&self, r: usize) -> &Tensor {
        self.set.value(self.layout.relations[r].matrix)
    }

    pub fn relation_weight(&self, r: usize) -> f64 {
        self.set.value(self.layout.relations[r].weight).item()
    }

    pub fn set_relation_weight(&mut self, r: usize, w: f64) {
        self.set
            .value_mut(self.layout.relations[r].weight)
            .data_mut()[0] = w;
    }

    /// Records every tensor on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = tape.bind(&self.set);
        Bound {
            vars,
            layout: self.layout.clone(),
        }
    }
}

/// Tape handles for every parameter of a [`ModelParams`].
pub struct Bound {
    vars: Vec<Var>,
    layout: Layout,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn item_emb(&self) -> Var {
        self.var(self.layout.item_emb)
    }

    pub fn pos_emb(&self) -> Var {
        self.var(self.layout.pos_emb)
    }

    pub fn relation_matrix(&self, r: usize) -> Var {
        self.var(self.layout.relations[r].matrix)
    }

    pub fn relation_weight(&self, r: usize) -> Var {
        self.var(self.layout.relations[r].weight)
    }

    pub fn num_relations(&self) -> usize {
        self.layout.relations.len()
    }
}

/// Whether blocks add the relation term to their attention logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attention {
    MultiRelational,
    /// Plain causal self-attention over the same weights.
    Plain,
}

/// Per-pass settings for [`encode`].
#[derive(Clone, Copy, Debug)]
pub struct Pass {
    pub heads: usize,
    pub dropout: f64,
    pub residual: ResidualMode,
    pub attention: Attention,
    pub training: bool,
}

impl Pass {
    pub fn new(hyper: &HyperParams, training: bool) -> Self {
        Pass {
            heads: hyper.heads,
            dropout: hyper.dropout,
            residual: hyper.residual_mode,
            attention: Attention::MultiRelational,
            training,
        }
    }

    pub fn eval(hyper: &HyperParams) -> Self {
        Pass::new(hyper, false)
    }
}

/// `E[t] = M[s_t] + P[t]`; padding rows pick up the zero row of `M`.
pub fn embed_sequence(tape: &mut Tape, bound: &Bound, padded: &PaddedSequence) -> Var {
    let items = tape.gather_rows(bound.item_emb(), &padded.items);
    let pos_len = tape.value(bound.pos_emb()).rows();
    assert_eq!(
        padded.len(),
        pos_len,
        "sequence length {} does not match positional table {}",
        padded.len(),
        pos_len
    );
    tape.add(items, bound.pos_emb())
}

/// Attention mask: query `i` may see key `j` iff `j ≤ i` and `j` is real.
pub fn causal_padding_mask(padded: &PaddedSequence) -> Vec<bool> {
    let n = padded.len();
    let first = padded.first_real();
    let mut keep = vec![false; n * n];
    for i in 0..n {
        for j in first..=i {
            keep[i * n + j] = true;
        }
    }
    keep
}

/// `Σ_r w_r · (X W_r)(X W_r)ᵀ`, or `None` without relations.
pub fn relation_term(tape: &mut Tape, bound: &Bound, x: Var) -> Option<Var> {
    let mut total = None;
    for r in 0..bound.num_relations() {
        let proj = tape.matmul(x, bound.relation_matrix(r));
        let gram = tape.matmul_nt(proj, proj);
        let weighted = tape.scale_by(gram, bound.relation_weight(r));
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted),
        });
    }
    total
}

/// Multi-relational self-attention over block input `x`.
#[allow(clippy::too_many_arguments)]
pub fn mrsa<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    layer: &LayerIds,
    x: Var,
    keep: &[bool],
    relation: Option<Var>,
    pass: &Pass,
    rng: &mut R,
) -> Var {
    let d = tape.value(x).cols();
    let q = tape.matmul(x, bound.var(layer.w_q));
    let k = tape.matmul(x, bound.var(layer.w_k));
    let v = tape.matmul(x, bound.var(layer.w_v));
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let head_dim = d / pass.heads;
    let mut outs = Vec::with_capacity(pass.heads);
    for h in 0..pass.heads {
        let (qh, kh, vh) = if pass.heads == 1 {
            (q, k, v)
        } else {
            let (a, b) = (h * head_dim, (h + 1) * head_dim);
            (
                tape.slice_cols(q, a, b),
                tape.slice_cols(k, a, b),
                tape.slice_cols(v, a, b),
            )
        };
        let mut logits = tape.matmul_nt(qh, kh);
        if let Some(rt) = relation {
            logits = tape.add(logits, rt);
        }
        let logits = tape.scale(logits, inv_sqrt_d);
        let probs = tape.softmax_masked(logits, keep);
        let probs = tape.dropout(probs, pass.dropout, pass.training, rng);
        outs.push(tape.matmul(probs, vh));
    }
    if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)
    }
}

fn ffn(tape: &mut Tape, bound: &Bound, layer: &LayerIds, x: Var) -> Var {
    let h = tape.matmul(x, bound.var(layer.ffn_w1));
    let h = tape.add_bias(h, bound.var(layer.ffn_b1));
    let h = tape.relu(h);
    let o = tape.matmul(h, bound.var(layer.ffn_w2));
    tape.add_bias(o, bound.var(layer.ffn_b2))
}

fn block<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    layer: &LayerIds,
    e: Var,
    keep: &[bool],
    pass: &Pass,
    rng: &mut R,
) -> Var {
    let relation_input = |tape: &mut Tape, x: Var| match pass.attention {
        Attention::MultiRelational => relation_term(tape, bound, x),
        Attention::Plain => None,
    };
    match pass.residual {
        ResidualMode::Standard => {
            let x = tape.layer_norm(
                e,
                bound.var(layer.ln1_gamma),
                bound.var(layer.ln1_beta),
                LAYER_NORM_EPS,
            );
            let rt = relation_input(tape, x);
            let a = mrsa(tape, bound, layer, x, keep, rt, pass, rng);
            let a = tape.dropout(a, pass.dropout, pass.training, rng);
            let e1 = tape.add(e, a);
            let y = tape.layer_norm(
                e1,
                bound.var(layer.ln2_gamma),
                bound.var(layer.ln2_beta),
                LAYER_NORM_EPS,
            );
            let f = ffn(tape, bound, layer, y);
            let f = tape.dropout(f, pass.dropout, pass.training, rng);
            tape.add(e1, f)
        }
        ResidualMode::Doubled => {
            let rt = relation_input(tape, e);
            let a = mrsa(tape, bound, layer, e, keep, rt, pass, rng);
            let y = tape.layer_norm(
                a,
                bound.var(layer.ln1_gamma),
                bound.var(layer.ln1_beta),
                LAYER_NORM_EPS,
            );
            let f = ffn(tape, bound, layer, y);
            let dropped = tape.dropout(f, pass.dropout, pass.training, rng);
            tape.add(f, dropped)
        }
    }
}

/// Runs the embedding and every block; returns the `L×d` output.
pub fn encode<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    padded: &PaddedSequence,
    pass: &Pass,
    rng: &mut R,
) -> Var {
    let keep = causal_padding_mask(padded);
    let mut e = embed_sequence(tape, bound, padded);
    for layer in &bound.layout.layers {
        e = block(tape, bound, layer, e, &keep, pass, rng);
    }
    e
}

/// Output row of the last position of an encoded sequence.
pub fn last_output(tape: &Tape, encoded: Var) -> Vec<f64> {
    let out = tape.value(encoded);
    out.row(out.rows() - 1).to_vec()
}

/// `score[v] = O_t · M[v]` for every item; `score[0] = −∞`.
pub fn next_item_scores(output: &[f64], params: &ModelParams) -> Vec<f64> {
    let m = params.item_embeddings();
    let mut scores: Vec<f64> = (0..m.rows()).map(|v| dot(output, m.row(v))).collect();
    scores[PAD] = f64::NEG_INFINITY;
    scores
}

/// `h · W · tᵀ`
pub fn bilinear_score(h: &[f64], w: &Tensor, t: &[f64]) -> f64 {
    let d = h.len();
    assert_eq!(w.rows(), d, "bilinear head dimension mismatch");
    assert_eq!(w.cols(), t.len(), "bilinear tail dimension mismatch");
    let mut total = 0.0;
    for (i, hi) in h.iter().enumerate() {
        total += hi * dot(w.row(i), t);
    }
    total
}

/// `f_r(v_i, v_j) = M[v_i] W_r W_rᵀ M[v_j]ᵀ`
pub fn relation_score(params: &ModelParams, vi: usize, vj: usize, r: usize) -> f64 {
    assert!(vi != PAD && vj != PAD, "relation_score on padding");
    let m = params.item_embeddings();
    let w = params.relation_matrix(r);
    let a = crate::diffkernel::matmul(&Tensor::matrix(1, w.rows(), m.row(vi).to_vec()), w);
    let b = crate::diffkernel::matmul(&Tensor::matrix(1, w.rows(), m.row(vj).to_vec()), w);
    dot(a.data(), b.data())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
