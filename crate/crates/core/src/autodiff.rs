//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records coarse operations (matrix products, layer norm, fused
//! causal attention, cross-entropy) in execution order. Nodes are appended
//! after their inputs, so walking the tape backwards is a valid topological
//! order. Leaves created with `requires_grad = false` act as constants and no
//! gradient work is done for them.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tensor::{axpy, dot, matmul_t, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutodiffError {
    #[error("backward has already been run on this graph")]
    DoubleBackward,
    #[error("loss must be a scalar, found {0} elements")]
    NotScalar(usize),
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMulT { x: Var, w: Var },
    Add(Var, Var),
    AddRow { x: Var, bias: Var },
    Scale(Var, f64),
    Gather { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, terms: Vec<(usize, usize)>, divisor: f64, probs: Vec<f64> },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + libm::tanh(C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = libm::tanh(inner);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable `log(sum(exp(row)))`.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds a leaf. Gradients are only tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()))
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn grad_or_zero(&self, v: Var) -> Tensor {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    /// `x[n, k] @ w[m, k]^T`. Weights are stored output-major.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let (n, k) = (xv.rows(), xv.cols());
        let m = wv.rows();
        assert_eq!(wv.cols(), k, "matmul_t inner dimension mismatch");
        let out = matmul_t(xv.data(), wv.data(), n, k, m);
        let rg = self.needs(x) || self.needs(w);
        self.push(Tensor::new(vec![n, m], out), Op::MatMulT { x, w }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        let rg = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data), Op::Add(a, b), rg)
    }

    /// Broadcast-adds a vector to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        let cols = xv.cols();
        assert_eq!(bv.len(), cols, "bias length mismatch");
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.needs(x) || self.needs(bias);
        self.push(Tensor::new(shape, data), Op::AddRow { x, bias }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|v| v * factor).collect();
        let shape = xv.shape().to_vec();
        let rg = self.needs(x);
        self.push(Tensor::new(shape, data), Op::Scale(x, factor), rg)
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = &self.nodes[table.0].value;
        let cols = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            data.extend_from_slice(tv.row(id));
        }
        let rg = self.needs(table);
        self.push(
            Tensor::new(vec![ids.len(), cols], data),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = (xv.rows(), xv.cols());
        let g = self.nodes[gain.0].value.data();
        let b = self.nodes[bias.0].value.data();
        let mut out = vec![0.0; rows * cols];
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            Tensor::new(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| gelu(v)).collect();
        let shape = xv.shape().to_vec();
        let rg = self.needs(x);
        self.push(Tensor::new(shape, data), Op::Gelu(x), rg)
    }

    /// Multiplies element-wise by a fixed mask (already scaled by `1 / keep`).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(mask.len(), xv.len(), "dropout mask length mismatch");
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = xv.shape().to_vec();
        let rg = self.needs(x);
        self.push(Tensor::new(shape, data), Op::Dropout { x, mask }, rg)
    }

    /// Fused multi-head causal self-attention over `[T, D]` projections.
    /// Query `i` attends to keys `j <= i` whose `key_valid[j]` is set.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        key_valid: &[bool],
    ) -> Var {
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let vv = &self.nodes[v.0].value;
        let (t, d) = (qv.rows(), qv.cols());
        assert_eq!(key_valid.len(), t, "key mask length mismatch");
        assert_eq!(d % heads, 0, "embedding not divisible by heads");
        let dh = d / heads;
        let inv_sqrt = 1.0 / libm::sqrt(dh as f64);
        let mut probs = vec![0.0; heads * t * t];
        let mut out = vec![0.0; t * d];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for h in 0..heads {
            let off = h * dh;
            for i in 0..t {
                let qi = &qd[i * d + off..i * d + off + dh];
                let p = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    if key_valid[j] {
                        let s = dot(qi, &kd[j * d + off..j * d + off + dh]) * inv_sqrt;
                        p[j] = s;
                        max = max.max(s);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut denom = 0.0;
                for j in 0..=i {
                    if key_valid[j] {
                        p[j] = libm::exp(p[j] - max);
                        denom += p[j];
                    }
                }
                let oi = &mut out[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    if key_valid[j] {
                        p[j] /= denom;
                        axpy(p[j], &vd[j * d + off..j * d + off + dh], oi);
                    }
                }
            }
        }
        let rg = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(
            Tensor::new(vec![t, d], out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        )
    }

    /// `sum_{(row, target)} -log softmax(logits[row])[target] / divisor`
    pub fn cross_entropy(&mut self, logits: Var, terms: &[(usize, usize)], divisor: f64) -> Var {
        let lv = &self.nodes[logits.0].value;
        let cols = lv.cols();
        let mut probs = Vec::with_capacity(terms.len() * cols);
        let mut total = 0.0;
        for &(row, target) in terms {
            let r = lv.row(row);
            let lse = log_sum_exp(r);
            total += lse - r[target];
            probs.extend(r.iter().map(|&x| libm::exp(x - lse)));
        }
        let rg = self.needs(logits);
        self.push(
            Tensor::scalar(total / divisor),
            Op::CrossEntropy {
                logits,
                terms: terms.to_vec(),
                divisor,
                probs,
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.nodes[x.0].value.data().iter().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        self.backward_with_seed(loss, 1.0)
    }

    /// Runs backward with `d loss = seed`. A graph can be differentiated once.
    pub fn backward_with_seed(&mut self, loss: Var, seed: f64) -> Result<(), AutodiffError> {
        let len = self.nodes[loss.0].value.len();
        if len != 1 {
            return Err(AutodiffError::NotScalar(len));
        }
        if self.backward_done {
            return Err(AutodiffError::DoubleBackward);
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![seed]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a += b;
                }
            }
            None => node.grad = Some(contribution),
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        // Contributions are computed against immutable borrows, then applied.
        let mut pending: Vec<(Var, Vec<f64>)> = Vec::new();
        {
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMulT { x, w } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (n, k, m) = (xv.rows(), xv.cols(), wv.rows());
                    if self.needs(*x) {
                        let mut dx = vec![0.0; n * k];
                        for i in 0..n {
                            let dxi = &mut dx[i * k..(i + 1) * k];
                            for j in 0..m {
                                let gij = g[i * m + j];
                                if gij != 0.0 {
                                    axpy(gij, &wv.data()[j * k..(j + 1) * k], dxi);
                                }
                            }
                        }
                        pending.push((*x, dx));
                    }
                    if self.needs(*w) {
                        let mut dw = vec![0.0; m * k];
                        for i in 0..n {
                            let xi = &xv.data()[i * k..(i + 1) * k];
                            for j in 0..m {
                                let gij = g[i * m + j];
                                if gij != 0.0 {
                                    axpy(gij, xi, &mut dw[j * k..(j + 1) * k]);
                                }
                            }
                        }
                        pending.push((*w, dw));
                    }
                }
                Op::Add(a, b) => {
                    pending.push((*a, g.to_vec()));
                    pending.push((*b, g.to_vec()));
                }
                Op::AddRow { x, bias } => {
                    pending.push((*x, g.to_vec()));
                    if self.needs(*bias) {
                        let cols = val(*bias).len();
                        let mut db = vec![0.0; cols];
                        for row in g.chunks_exact(cols) {
                            for (d, r) in db.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                        pending.push((*bias, db));
                    }
                }
                Op::Scale(x, factor) => {
                    pending.push((*x, g.iter().map(|v| v * factor).collect()));
                }
                Op::Gather { table, ids } => {
                    let tv = val(*table);
                    let cols = tv.cols();
                    let mut dt = vec![0.0; tv.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(1.0, &g[r * cols..(r + 1) * cols], &mut dt[id * cols..(id + 1) * cols]);
                    }
                    pending.push((*table, dt));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let cols = val(*gain).len();
                    let rows = rstd.len();
                    let gv = val(*gain).data();
                    if self.needs(*gain) || self.needs(*bias) {
                        let mut dg = vec![0.0; cols];
                        let mut db = vec![0.0; cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                let gi = g[r * cols + c];
                                dg[c] += gi * xhat[r * cols + c];
                                db[c] += gi;
                            }
                        }
                        pending.push((*gain, dg));
                        pending.push((*bias, db));
                    }
                    if self.needs(*x) {
                        let mut dx = vec![0.0; rows * cols];
                        for r in 0..rows {
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for c in 0..cols {
                                let dh = g[r * cols + c] * gv[c];
                                mean_d += dh;
                                mean_dx += dh * xhat[r * cols + c];
                            }
                            mean_d /= cols as f64;
                            mean_dx /= cols as f64;
                            for c in 0..cols {
                                let dh = g[r * cols + c] * gv[c];
                                dx[r * cols + c] =
                                    rstd[r] * (dh - mean_d - xhat[r * cols + c] * mean_dx);
                            }
                        }
                        pending.push((*x, dx));
                    }
                }
                Op::Gelu(x) => {
                    let xv = val(*x).data();
                    pending.push((*x, g.iter().zip(xv).map(|(gi, &xi)| gi * gelu_grad(xi)).collect()));
                }
                Op::Dropout { x, mask } => {
                    pending.push((*x, g.iter().zip(mask).map(|(gi, m)| gi * m).collect()));
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qd, kd, vd) = (val(*q).data(), val(*k).data(), val(*v).data());
                    let (t, d) = (val(*q).rows(), val(*q).cols());
                    let dh = d / heads;
                    let inv_sqrt = 1.0 / libm::sqrt(dh as f64);
                    let mut dq = vec![0.0; t * d];
                    let mut dk = vec![0.0; t * d];
                    let mut dv = vec![0.0; t * d];
                    let mut dp = vec![0.0; t];
                    for h in 0..*heads {
                        let off = h * dh;
                        for i in 0..t {
                            let p = &probs[(h * t + i) * t..(h * t + i + 1) * t];
                            let gi = &g[i * d + off..i * d + off + dh];
                            let mut weighted = 0.0;
                            for j in 0..=i {
                                if p[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                axpy(p[j], gi, &mut dv[j * d + off..j * d + off + dh]);
                                dp[j] = dot(gi, &vd[j * d + off..j * d + off + dh]);
                                weighted += p[j] * dp[j];
                            }
                            for j in 0..=i {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let ds = p[j] * (dp[j] - weighted) * inv_sqrt;
                                let (qs, ks) = (i * d + off, j * d + off);
                                for c in 0..dh {
                                    dq[qs + c] += ds * kd[ks + c];
                                    dk[ks + c] += ds * qd[qs + c];
                                }
                            }
                        }
                    }
                    pending.push((*q, dq));
                    pending.push((*k, dk));
                    pending.push((*v, dv));
                }
                Op::CrossEntropy {
                    logits,
                    terms,
                    divisor,
                    probs,
                } => {
                    let lv = val(*logits);
                    let cols = lv.cols();
                    let scale = g[0] / divisor;
                    let mut dl = vec![0.0; lv.len()];
                    for (n, &(row, target)) in terms.iter().enumerate() {
                        let p = &probs[n * cols..(n + 1) * cols];
                        let d = &mut dl[row * cols..(row + 1) * cols];
                        axpy(scale, p, d);
                        d[target] -= scale;
                    }
                    pending.push((*logits, dl));
                }
                Op::Sum(x) => {
                    pending.push((*x, vec![g[0]; val(*x).len()]));
                }
            }
        }
        for (v, contribution) in pending {
            self.accumulate(v, contribution);
        }
    }
}
