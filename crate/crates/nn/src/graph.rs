//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! [`Graph::backward`] then walks the tape in reverse, accumulating gradients
//! into every node that depends on a parameter. Tensors are treated as 2-D
//! `rows x cols` blocks; leading dimensions are folded into rows.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::tensor::{Float, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    Softmax { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, mean: Vec<F>, rstd: Vec<F> },
    Gelu { x: usize, derivative: Vec<F> },
    Embedding { table: usize, ids: Vec<usize> },
    Attention { qkv: usize, batch: usize, seq: usize, heads: usize, probs: Vec<F> },
    Dropout { x: usize, mask: Vec<F> },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<F>, rows: Vec<F> },
}

#[derive(Debug)]
struct Node<F> {
    rows: usize,
    cols: usize,
    value: Vec<F>,
    grad: Vec<F>,
    needs_grad: bool,
    op: Op<F>,
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<F: Float>(values: &[F], op: &'static str) -> Result<()> {
    // No short circuit, so the scan vectorizes.
    if values.iter().fold(true, |ok, v| ok & v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NumericFault { op })
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(NnError::Shape(msg))
}

impl<F: Float> Graph<F> {
    /// A graph with dropout disabled (evaluation mode).
    pub fn new() -> Self {
        Self { nodes: Vec::new(), dropout_rng: None }
    }

    /// A graph in training mode; dropout masks are drawn from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Self { nodes: Vec::new(), dropout_rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<F>, op: Op<F>, name: &'static str) -> Result<Var> {
        check_finite(&value, name)?;
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Mul { a, b } => {
                self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
            }
            Op::AddBias { x, bias } => self.nodes[*x].needs_grad || self.nodes[*bias].needs_grad,
            Op::LayerNorm { x, gain, bias, .. } => [x, gain, bias].iter().any(|&&i| self.nodes[i].needs_grad),
            Op::Softmax { x } | Op::Gelu { x, .. } | Op::Dropout { x, .. } => self.nodes[*x].needs_grad,
            Op::Embedding { table, .. } => self.nodes[*table].needs_grad,
            Op::Attention { qkv, .. } => self.nodes[*qkv].needs_grad,
            Op::CrossEntropy { logits, .. } => self.nodes[*logits].needs_grad,
        };
        self.nodes.push(Node { rows, cols, value, grad: Vec::new(), needs_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(t: &Tensor<F>) -> (usize, usize) {
        match t.shape() {
            [] => (1, 1),
            [c] => (1, *c),
            s => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        }
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: &Tensor<F>) -> Var {
        let (rows, cols) = Self::dims(t);
        self.nodes.push(Node { rows, cols, value: t.data().to_vec(), grad: Vec::new(), needs_grad: true, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn constant(&mut self, t: &Tensor<F>) -> Var {
        let (rows, cols) = Self::dims(t);
        self.nodes.push(Node { rows, cols, value: t.data().to_vec(), grad: Vec::new(), needs_grad: false, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn dims_of(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    /// Gradient after [`Graph::backward`]; `None` if the node was not reached.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        let g = &self.nodes[v.0].grad;
        (!g.is_empty()).then_some(g.as_slice())
    }

    /// Per-row losses stored by [`Graph::cross_entropy`].
    pub fn row_losses(&self, v: Var) -> Option<&[F]> {
        match &self.nodes[v.0].op {
            Op::CrossEntropy { rows, .. } => Some(rows),
            _ => None,
        }
    }

    /// `a [m, k] x b [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims_of(a);
        let (k2, n) = self.dims_of(b);
        if k != k2 {
            return shape_err(format!("matmul [{m}, {k}] x [{k2}, {n}]"));
        }
        let mut out = vec![F::zero(); m * n];
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        unsafe {
            F::gemm(m, k, n, F::one(), av.as_ptr(), k as isize, 1, bv.as_ptr(), n as isize, 1, F::zero(), out.as_mut_ptr(), n as isize, 1);
        }
        self.push(m, n, out, Op::MatMul { a: a.0, b: b.0 }, "matmul")
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims_of(a), self.dims_of(b));
        if da != db {
            return shape_err(format!("{op} of {da:?} and {db:?}"));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let out = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| x + y).collect();
        self.push(r, c, out, Op::Add { a: a.0, b: b.0 }, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let out = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| x * y).collect();
        self.push(r, c, out, Op::Mul { a: a.0, b: b.0 }, "mul")
    }

    /// Adds a `[cols]` bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims_of(x);
        if self.nodes[bias.0].value.len() != c {
            return shape_err(format!("bias of {} values for {c} columns", self.nodes[bias.0].value.len()));
        }
        let b = &self.nodes[bias.0].value;
        let mut out = self.nodes[x.0].value.clone();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(b).for_each(|(v, &w)| *v += w);
        }
        self.push(r, c, out, Op::AddBias { x: x.0, bias: bias.0 }, "add_bias")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims_of(x);
        let mut out = self.nodes[x.0].value.clone();
        out.chunks_mut(c).for_each(softmax_in_place);
        self.push(r, c, out, Op::Softmax { x: x.0 }, "softmax")
    }

    /// Row-wise layer normalization with gain and bias of length `cols`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims_of(x);
        if self.nodes[gain.0].value.len() != c || self.nodes[bias.0].value.len() != c {
            return shape_err(format!("layernorm parameters must have {c} values"));
        }
        let eps = F::lit(LN_EPS);
        let cf = F::from_usize(c).expect("usize");
        let (g, b) = (&self.nodes[gain.0].value, &self.nodes[bias.0].value);
        let mut out = Vec::with_capacity(r * c);
        let mut means = Vec::with_capacity(r);
        let mut rstds = Vec::with_capacity(r);
        for row in self.nodes[x.0].value.chunks(c) {
            let mean = row.iter().fold(F::zero(), |a, &v| a + v) / cf;
            let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / cf;
            let rstd = F::one() / (var + eps).sqrt();
            out.extend(row.iter().zip(g.iter().zip(b)).map(|(&v, (&gi, &bi))| (v - mean) * rstd * gi + bi));
            means.push(mean);
            rstds.push(rstd);
        }
        self.push(r, c, out, Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, mean: means, rstd: rstds }, "layernorm")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims_of(x);
        let (out, derivative) = self.nodes[x.0].value.iter().map(|&v| gelu(v)).unzip();
        self.push(r, c, out, Op::Gelu { x: x.0, derivative }, "gelu")
    }

    /// Gathers rows of `table` (shape `[entries, cols]`).
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (entries, c) = self.dims_of(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= entries) {
            return Err(NnError::InvalidArgument(format!("embedding index {bad} >= {entries}")));
        }
        let t = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&t[i * c..(i + 1) * c]);
        }
        self.push(ids.len(), c, out, Op::Embedding { table: table.0, ids: ids.to_vec() }, "embedding")
    }

    /// Causal multi-head self-attention on packed `[batch * seq, 3 * d]`
    /// query/key/value rows. Position `t` attends to positions `<= t` only.
    pub fn causal_attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let (rows, c3) = self.dims_of(qkv);
        if rows != batch * seq || c3 % 3 != 0 || heads == 0 || (c3 / 3) % heads != 0 {
            return shape_err(format!("attention input [{rows}, {c3}] for batch {batch}, seq {seq}, heads {heads}"));
        }
        let d = c3 / 3;
        let hd = d / heads;
        let scale = F::one() / F::from_usize(hd).expect("usize").sqrt();
        let x = &self.nodes[qkv.0].value;
        let mut out = vec![F::zero(); rows * d];
        let mut probs = vec![F::zero(); batch * heads * seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * c3 + h * hd;
                let p = &mut probs[(b * heads + h) * seq * seq..][..seq * seq];
                unsafe {
                    // scores = scale * q k^T
                    F::gemm(seq, hd, seq, scale, x.as_ptr().add(base), c3 as isize, 1, x.as_ptr().add(base + d), 1, c3 as isize, F::zero(), p.as_mut_ptr(), seq as isize, 1);
                }
                for (t, row) in p.chunks_mut(seq).enumerate() {
                    softmax_in_place(&mut row[..=t]);
                    row[t + 1..].iter_mut().for_each(|v| *v = F::zero());
                }
                unsafe {
                    F::gemm(seq, seq, hd, F::one(), p.as_ptr(), seq as isize, 1, x.as_ptr().add(base + 2 * d), c3 as isize, 1, F::zero(), out.as_mut_ptr().add(b * seq * d + h * hd), d as isize, 1);
                }
            }
        }
        self.push(rows, d, out, Op::Attention { qkv: qkv.0, batch, seq, heads, probs }, "attention")
    }

    /// Inverted dropout. The identity when `rate == 0` or in evaluation mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let (r, c) = (self.nodes[x.0].rows, self.nodes[x.0].cols);
        let keep = F::lit(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..r * c).map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep }).collect();
        let out = self.nodes[x.0].value.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.push(r, c, out, Op::Dropout { x: x.0, mask }, "dropout")
    }

    /// Mean cross-entropy (nats) of `[rows, classes]` logits against target
    /// classes; per-row losses are kept for [`Graph::row_losses`].
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims_of(logits);
        if targets.len() != r {
            return shape_err(format!("{} targets for {r} logit rows", targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NnError::InvalidArgument(format!("target {bad} >= {c} classes")));
        }
        let mut probs = self.nodes[logits.0].value.clone();
        let mut rows = Vec::with_capacity(r);
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let lse = row.iter().fold(F::zero(), |a, &b| a + (b - max).exp()).ln() + max;
            rows.push(lse - row[t]);
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let mean = rows.iter().fold(F::zero(), |a, &b| a + b) / F::from_usize(r.max(1)).expect("usize");
        check_finite(&rows, "cross_entropy")?;
        self.push(1, 1, vec![mean], Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), probs, rows }, "cross_entropy")
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return shape_err("backward needs a scalar output".into());
        }
        self.backward_with(loss, vec![F::one()])
    }

    /// Backpropagates an explicit upstream gradient for `out`.
    pub fn backward_with(&mut self, out: Var, upstream: Vec<F>) -> Result<()> {
        if upstream.len() != self.nodes[out.0].value.len() {
            return shape_err("upstream gradient size differs from the node".into());
        }
        for n in &mut self.nodes {
            n.grad.clear();
        }
        self.nodes[out.0].grad = upstream;
        for i in (0..=out.0).rev() {
            if self.nodes[i].grad.is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let grad = std::mem::take(&mut self.nodes[i].grad);
            for (target, contribution) in self.local_backward(i, &grad) {
                let node = &mut self.nodes[target];
                if !node.needs_grad {
                    continue;
                }
                if node.grad.is_empty() {
                    node.grad = contribution;
                } else {
                    node.grad.iter_mut().zip(contribution).for_each(|(g, c)| *g += c);
                }
            }
            self.nodes[i].grad = grad;
        }
        Ok(())
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Gradient contributions of node `i` to its inputs.
    fn local_backward(&self, i: usize, g: &[F]) -> Vec<(usize, Vec<F>)> {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b } => {
                let (m, k, n) = (rows, self.nodes[a].cols, cols);
                if self.wants(a) {
                    // dA = dC B^T
                    let mut da = vec![F::zero(); m * k];
                    let bv = &self.nodes[b].value;
                    unsafe {
                        F::gemm(m, n, k, F::one(), g.as_ptr(), n as isize, 1, bv.as_ptr(), 1, n as isize, F::zero(), da.as_mut_ptr(), k as isize, 1);
                    }
                    out.push((a, da));
                }
                if self.wants(b) {
                    // dB = A^T dC
                    let mut db = vec![F::zero(); k * n];
                    let av = &self.nodes[a].value;
                    unsafe {
                        F::gemm(k, m, n, F::one(), av.as_ptr(), 1, k as isize, g.as_ptr(), n as isize, 1, F::zero(), db.as_mut_ptr(), n as isize, 1);
                    }
                    out.push((b, db));
                }
            }
            &Op::Add { a, b } => {
                out.push((a, g.to_vec()));
                out.push((b, g.to_vec()));
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                out.push((a, g.iter().zip(bv).map(|(&g, &y)| g * y).collect()));
                out.push((b, g.iter().zip(av).map(|(&g, &x)| g * x).collect()));
            }
            &Op::AddBias { x, bias } => {
                out.push((x, g.to_vec()));
                if self.wants(bias) {
                    let mut db = vec![F::zero(); cols];
                    for row in g.chunks(cols) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    out.push((bias, db));
                }
            }
            &Op::Softmax { x } => {
                let y = &node.value;
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(cols).zip(g.chunks(cols)) {
                    let dot = yr.iter().zip(gr).fold(F::zero(), |a, (&p, &d)| a + p * d);
                    dx.extend(yr.iter().zip(gr).map(|(&p, &d)| p * (d - dot)));
                }
                out.push((x, dx));
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let xv = &self.nodes[*x].value;
                let gv = &self.nodes[*gain].value;
                let cf = F::from_usize(cols).expect("usize");
                let mut dx = Vec::with_capacity(xv.len());
                let mut dg = vec![F::zero(); cols];
                let mut db = vec![F::zero(); cols];
                for r in 0..rows {
                    let xr = &xv[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let (mu, rs) = (mean[r], rstd[r]);
                    let mut sum_d = F::zero();
                    let mut sum_dx = F::zero();
                    for j in 0..cols {
                        let xhat = (xr[j] - mu) * rs;
                        let d = gr[j] * gv[j];
                        sum_d += d;
                        sum_dx += d * xhat;
                        dg[j] += gr[j] * xhat;
                        db[j] += gr[j];
                    }
                    let (md, mdx) = (sum_d / cf, sum_dx / cf);
                    for j in 0..cols {
                        let xhat = (xr[j] - mu) * rs;
                        dx.push(rs * (gr[j] * gv[j] - md - xhat * mdx));
                    }
                }
                out.push((*x, dx));
                out.push((*gain, dg));
                out.push((*bias, db));
            }
            Op::Gelu { x, derivative } => {
                out.push((*x, derivative.iter().zip(g).map(|(&dy, &d)| d * dy).collect()));
            }
            Op::Embedding { table, ids } => {
                let (entries, c) = (self.nodes[*table].rows, self.nodes[*table].cols);
                let mut dt = vec![F::zero(); entries * c];
                for (r, &id) in ids.iter().enumerate() {
                    dt[id * c..(id + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(d, &v)| *d += v);
                }
                out.push((*table, dt));
            }
            Op::Attention { qkv, batch, seq, heads, probs } => {
                out.push((*qkv, self.attention_backward(*qkv, *batch, *seq, *heads, probs, g)));
            }
            Op::Dropout { x, mask } => {
                out.push((*x, g.iter().zip(mask).map(|(&d, &m)| d * m).collect()));
            }
            Op::CrossEntropy { logits, targets, probs, .. } => {
                let c = self.nodes[*logits].cols;
                let scale = g[0] / F::from_usize(targets.len().max(1)).expect("usize");
                let mut dl: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * c + t] -= scale;
                }
                out.push((*logits, dl));
            }
        }
        out
    }

    fn attention_backward(&self, qkv: usize, batch: usize, seq: usize, heads: usize, probs: &[F], g: &[F]) -> Vec<F> {
        let x = &self.nodes[qkv].value;
        let c3 = self.nodes[qkv].cols;
        let d = c3 / 3;
        let hd = d / heads;
        let scale = F::one() / F::from_usize(hd).expect("usize").sqrt();
        let mut dx = vec![F::zero(); x.len()];
        let mut dp = vec![F::zero(); seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * c3 + h * hd;
                let gout = b * seq * d + h * hd;
                let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
                unsafe {
                    // dP = dO V^T
                    F::gemm(seq, hd, seq, F::one(), g.as_ptr().add(gout), d as isize, 1, x.as_ptr().add(base + 2 * d), 1, c3 as isize, F::zero(), dp.as_mut_ptr(), seq as isize, 1);
                    // dV = P^T dO
                    F::gemm(seq, seq, hd, F::one(), p.as_ptr(), 1, seq as isize, g.as_ptr().add(gout), d as isize, 1, F::one(), dx.as_mut_ptr().add(base + 2 * d), c3 as isize, 1);
                }
                // dS = P * (dP - rowsum(dP * P)), zero above the diagonal.
                for t in 0..seq {
                    let pr = &p[t * seq..(t + 1) * seq];
                    let dr = &mut dp[t * seq..(t + 1) * seq];
                    let dot = (0..=t).fold(F::zero(), |a, j| a + pr[j] * dr[j]);
                    for j in 0..seq {
                        dr[j] = if j <= t { pr[j] * (dr[j] - dot) } else { F::zero() };
                    }
                }
                unsafe {
                    // dQ = scale * dS K
                    F::gemm(seq, seq, hd, scale, dp.as_ptr(), seq as isize, 1, x.as_ptr().add(base + d), c3 as isize, 1, F::one(), dx.as_mut_ptr().add(base), c3 as isize, 1);
                    // dK = scale * dS^T Q
                    F::gemm(seq, seq, hd, scale, dp.as_ptr(), 1, seq as isize, x.as_ptr().add(base), c3 as isize, 1, F::one(), dx.as_mut_ptr().add(base + d), c3 as isize, 1);
                }
            }
        }
        dx
    }
}

fn softmax_in_place<F: Float>(row: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// `tanh` through one `exp`, several times faster than libm's `tanhf`.
fn tanh<F: Float>(x: F) -> F {
    let two = F::lit(2.0);
    // Saturated beyond |x| = 20 in both precisions of interest.
    let x = x.max(F::lit(-20.0)).min(F::lit(20.0));
    let e = (two * x).exp();
    (e - F::one()) / (e + F::one())
}

/// Value and derivative of the tanh-approximated GELU.
fn gelu<F: Float>(x: F) -> (F, F) {
    let c = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = F::lit(0.044715);
    let half = F::lit(0.5);
    let inner = c * (x + a * x * x * x);
    let t = tanh(inner);
    let y = half * x * (F::one() + t);
    let dy = half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * a * x * x);
    (y, dy)
}
