//! Recording tape for reverse-mode differentiation.
//!
//! Every kernel call evaluates eagerly, stores its output on the tape and
//! remembers its inputs. [`Tape::backward`] walks the records in reverse and
//! accumulates adjoints; leaves bound to a [`ParamId`] hand their adjoint to
//! the returned [`Gradients`].

use rand::Rng;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn};
use super::{Gradients, ParamId, ParamSet, Tensor};

/// Scores are clamped to this magnitude before `log σ`.
pub const LOG_SIGMOID_CLAMP: f64 = 30.0;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SoftmaxMasked(Var, Vec<bool>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Dropout(Var, Vec<f64>),
    RowDot(Var, Var),
    LogSigmoid(Var),
    WeightedSum(Var, Vec<f64>),
    Sum(Var),
    SumSquares(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite output from {:?}", op);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf(None))
    }

    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(value, Op::Leaf(Some(id)))
    }

    /// Records every tensor of `params` as a leaf, in id order.
    pub fn bind(&mut self, params: &ParamSet) -> Vec<Var> {
        params
            .iter()
            .map(|(id, p)| self.param(id, p.value.clone()))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(
            k,
            bv.rows(),
            "matmul shape mismatch {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = vec![0.0; m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        assert_eq!(
            k,
            bv.cols(),
            "matmul_nt shape mismatch {:?} x {:?}ᵀ",
            av.shape(),
            bv.shape()
        );
        let mut out = vec![0.0; m * n];
        gemm_nt(av.data(), bv.data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out), Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Add(a, b))
    }

    /// Adds `bias[n]` to every row of `x[m×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.cols();
        assert_eq!(bv.len(), n, "bias length mismatch");
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, bias))
    }

    /// `offset + scale · x`, elementwise.
    pub fn affine(&mut self, x: Var, offset: f64, scale: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = offset + scale * *v);
        self.push(out, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= scale);
        self.push(out, Op::Affine(x, scale))
    }

    /// Multiplies `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= sv);
        self.push(out, Op::ScaleBy(x, s))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        let (rows, d) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < rows, "row index {} out of range for {} rows", i, rows);
            out.extend_from_slice(tv.row(i));
        }
        self.push(
            Tensor::matrix(indices.len(), d, out),
            Op::GatherRows(table, indices.to_vec()),
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        assert!(
            start < end && end <= n,
            "column slice {}..{} out of 0..{}",
            start,
            end,
            n
        );
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&xv.row(i)[start..end]);
        }
        self.push(Tensor::matrix(m, end - start, out), Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let m = self.value(parts[0]).rows();
        let n: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows(), m, "concat row mismatch");
                out.extend_from_slice(pv.row(i));
            }
        }
        self.push(Tensor::matrix(m, n, out), Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise softmax where `keep[i*n+j] == false` entries get probability
    /// zero. Rows with nothing kept come out all zero.
    pub fn softmax_masked(&mut self, logits: Var, keep: &[bool]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), keep.len(), "mask shape mismatch");
        let n = lv.cols();
        let mut out = vec![0.0; lv.len()];
        for (i, row) in lv.data().chunks(n).enumerate() {
            let mask = &keep[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, k)| **k)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let o = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if mask[j] {
                    o[j] = (row[j] - max).exp();
                    total += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= total);
        }
        let shape = lv.shape().to_vec();
        self.push(
            Tensor::new(shape, out),
            Op::SoftmaxMasked(logits, keep.to_vec()),
        )
    }

    /// Per-row normalisation to zero mean and unit population variance,
    /// followed by `gamma ⊙ · + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.cols();
        assert!(d >= 1);
        assert_eq!(gv.len(), d, "gamma length mismatch");
        assert_eq!(bv.len(), d, "beta length mismatch");
        let m = xv.rows();
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::new(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// Inverted dropout. Identity (and no record of randomness) when not
    /// training or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Var {
        assert!(
            (0.0..1.0).contains(&p),
            "dropout probability {} not in [0, 1)",
            p
        );
        if !training || p == 0.0 {
            return x;
        }
        let keep_scale = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mult: Vec<f64> = (0..xv.len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = xv.data().iter().zip(&mult).map(|(v, m)| v * m).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::Dropout(x, mult))
    }

    /// Dot product of matching rows: `[m×n], [m×n] → [m]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_dot shape mismatch");
        let n = av.cols();
        let out = av
            .data()
            .chunks(n)
            .zip(bv.data().chunks(n))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        self.push(Tensor::vector(out), Op::RowDot(a, b))
    }

    /// Elementwise `log σ(x)` with `x` clamped to `±LOG_SIGMOID_CLAMP`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = log_sigmoid(*v));
        self.push(out, Op::LogSigmoid(x))
    }

    /// `Σ weights ⊙ x` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), weights.len(), "weight length mismatch");
        let s = xv.data().iter().zip(&weights).map(|(a, w)| a * w).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum(x, weights))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Sum of squares over all rows from `skip_rows` on.
    pub fn sum_squares(&mut self, x: Var, skip_rows: usize) -> Var {
        let xv = self.value(x);
        let start = skip_rows * xv.cols();
        let s = xv.data()[start..].iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x, skip_rows))
    }

    /// Sums a list of scalars (left to right).
    pub fn add_all(&mut self, terms: &[Var]) -> Option<Var> {
        let mut iter = terms.iter().copied();
        let first = iter.next()?;
        Some(iter.fold(first, |acc, t| self.add(acc, t)))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let lv = self.value(loss);
        assert_eq!(
            lv.len(),
            1,
            "backward needs a scalar loss, got shape {:?}",
            lv.shape()
        );

        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        let mut grads = Gradients::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf(Some(id)) => {
                    grads.accumulate(*id, Tensor::new(node.value.shape().to_vec(), g));
                }
                Op::Leaf(None) => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    gemm_nt(&g, bv.data(), acc(&mut adj, *a, m * k), m, n, k);
                    gemm_tn(av.data(), &g, acc(&mut adj, *b, k * n), m, k, n);
                }
                Op::MatMulNt(a, b) => {
                    // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                    gemm_nn(&g, bv.data(), acc(&mut adj, *a, m * k), m, n, k);
                    gemm_tn(&g, av.data(), acc(&mut adj, *b, n * k), m, n, k);
                }
                Op::Add(a, b) => {
                    axpy(acc(&mut adj, *a, g.len()), 1.0, &g);
                    axpy(acc(&mut adj, *b, g.len()), 1.0, &g);
                }
                Op::AddBias(x, bias) => {
                    axpy(acc(&mut adj, *x, g.len()), 1.0, &g);
                    let n = self.value(*bias).len();
                    let db = acc(&mut adj, *bias, n);
                    for row in g.chunks(n) {
                        axpy(db, 1.0, row);
                    }
                }
                Op::Affine(x, scale) => {
                    axpy(acc(&mut adj, *x, g.len()), *scale, &g);
                }
                Op::ScaleBy(x, s) => {
                    let sv = self.value(*s).item();
                    axpy(acc(&mut adj, *x, g.len()), sv, &g);
                    let xv = self.value(*x);
                    let ds: f64 = xv.data().iter().zip(&g).map(|(a, b)| a * b).sum();
                    acc(&mut adj, *s, 1)[0] += ds;
                }
                Op::GatherRows(table, indices) => {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let dt = acc(&mut adj, *table, tv.len());
                    for (r, &i) in indices.iter().enumerate() {
                        axpy(&mut dt[i * d..(i + 1) * d], 1.0, &g[r * d..(r + 1) * d]);
                    }
                }
                Op::SliceCols(x, start) => {
                    let xv = self.value(*x);
                    let (m, n) = (xv.rows(), xv.cols());
                    let w = node.value.cols();
                    let dx = acc(&mut adj, *x, m * n);
                    for i in 0..m {
                        axpy(
                            &mut dx[i * n + start..i * n + start + w],
                            1.0,
                            &g[i * w..(i + 1) * w],
                        );
                    }
                }
                Op::ConcatCols(parts) => {
                    let n = node.value.cols();
                    let m = node.value.rows();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let dp = acc(&mut adj, *p, m * w);
                        for i in 0..m {
                            axpy(
                                &mut dp[i * w..(i + 1) * w],
                                1.0,
                                &g[i * n + offset..i * n + offset + w],
                            );
                        }
                        offset += w;
                    }
                }
                Op::SoftmaxMasked(x, keep) => {
                    let y = node.value.data();
                    let n = node.value.cols();
                    let dx = acc(&mut adj, *x, y.len());
                    for i in 0..node.value.rows() {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            if keep[i * n + j] {
                                dx[i * n + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let d = node.value.cols();
                    let m = node.value.rows();
                    let gv = self.value(*gamma).data().to_vec();
                    {
                        let dg = acc(&mut adj, *gamma, d);
                        for i in 0..m {
                            for j in 0..d {
                                dg[j] += g[i * d + j] * xhat[i * d + j];
                            }
                        }
                    }
                    {
                        let db = acc(&mut adj, *beta, d);
                        for row in g.chunks(d) {
                            axpy(db, 1.0, row);
                        }
                    }
                    let dx = acc(&mut adj, *x, m * d);
                    let nf = d as f64;
                    for i in 0..m {
                        let xh = &xhat[i * d..(i + 1) * d];
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..d {
                            let dxh = g[i * d + j] * gv[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let scale = inv_std[i] / nf;
                        for j in 0..d {
                            let dxh = g[i * d + j] * gv[j];
                            dx[i * d + j] += scale * (nf * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                        }
                    }
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let dx = acc(&mut adj, *x, y.len());
                    for ((d, gv), yv) in dx.iter_mut().zip(&g).zip(y) {
                        if *yv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Dropout(x, mult) => {
                    let dx = acc(&mut adj, *x, mult.len());
                    for ((d, gv), m) in dx.iter_mut().zip(&g).zip(mult) {
                        *d += gv * m;
                    }
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let n = av.cols();
                    {
                        let da = acc(&mut adj, *a, av.len());
                        for (i, gi) in g.iter().enumerate() {
                            axpy(&mut da[i * n..(i + 1) * n], *gi, bv.row(i));
                        }
                    }
                    let db = acc(&mut adj, *b, bv.len());
                    for (i, gi) in g.iter().enumerate() {
                        axpy(&mut db[i * n..(i + 1) * n], *gi, av.row(i));
                    }
                }
                Op::LogSigmoid(x) => {
                    let xv = self.value(*x);
                    let dx = acc(&mut adj, *x, xv.len());
                    for ((d, gv), v) in dx.iter_mut().zip(&g).zip(xv.data()) {
                        if v.abs() < LOG_SIGMOID_CLAMP {
                            *d += gv * sigmoid(-v);
                        }
                    }
                }
                Op::WeightedSum(x, w) => {
                    axpy(acc(&mut adj, *x, w.len()), g[0], w);
                }
                Op::Sum(x) => {
                    let dx = acc(&mut adj, *x, self.value(*x).len());
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::SumSquares(x, skip_rows) => {
                    let xv = self.value(*x);
                    let start = skip_rows * xv.cols();
                    let dx = acc(&mut adj, *x, xv.len());
                    for (d, v) in dx[start..].iter_mut().zip(&xv.data()[start..]) {
                        *d += 2.0 * v * g[0];
                    }
                }
            }
        }
        grads
    }
}

fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` with the argument clamped to `±LOG_SIGMOID_CLAMP`.
pub fn log_sigmoid(x: f64) -> f64 {
    let x = x.clamp(-LOG_SIGMOID_CLAMP, LOG_SIGMOID_CLAMP);
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
