//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during one forward pass. Node
//! values are held in `f64` so that gradient checks are not swamped by
//! single-precision rounding; everything handed back to callers as a
//! [`Tensor`] is rounded to `f32`.

use super::tensor::Tensor;
use crate::error::{PinsError, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    MatMul,
    Add,
    Mul,
    Relu,
    Gelu,
    SoftmaxRows,
    LayerNormRows,
    EmbeddingLookup,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add { a: usize, b: usize, broadcast: bool },
    Mul { a: usize, b: usize, broadcast: bool },
    Relu(usize),
    Gelu(usize),
    SoftmaxRows(usize),
    LayerNormRows { x: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Embedding { table: usize, ids: Vec<usize> },
    Scale(usize, f64),
    Transpose(usize),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    Sum(usize),
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
    KlDiv {
        p: usize,
        q: usize,
        p_probs: Vec<f64>,
        q_probs: Vec<f64>,
        log_ratio: Vec<f64>,
        row_kl: Vec<f64>,
        grad_p: bool,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

impl Node {
    fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            _ => (1, self.value.len()),
        }
    }
}

/// Operation record for one forward pass. Node order is topological by
/// construction: inputs always exist before the node consuming them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.adjoints.get(var.0).and_then(|a| a.as_deref())
    }

    /// Gradient of `var` rounded to `f32`; zeros when `var` was unreachable.
    pub fn to_vec_f32(&self, var: Var) -> Vec<f32> {
        match self.get(var) {
            Some(g) => g.iter().map(|&v| v as f32).collect(),
            None => vec![0.0; self.shapes[var.0].iter().product()],
        }
    }

    pub fn tensor(&self, var: Var) -> Tensor {
        Tensor::new(self.shapes[var.0].clone(), self.to_vec_f32(var))
            .expect("gradient shape mirrors node shape")
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let value = t.data().iter().map(|&v| v as f64).collect();
        self.push(t.shape().to_vec(), value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let value = t.data().iter().map(|&v| v as f64).collect();
        self.push(t.shape().to_vec(), value, Op::Leaf, false)
    }

    pub fn constant_f64(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(PinsError::shape("constant", &shape, &[value.len()]));
        }
        Ok(self.push(shape, value, Op::Leaf, false))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value_f64(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    /// Node value rounded to `f32`.
    pub fn value(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.iter().map(|&x| x as f32).collect())
            .expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let n = self.node(v);
        if n.shape.len() != 2 {
            return Err(PinsError::rejected(
                op,
                format!("expected a rank-2 input, got shape {:?}", n.shape),
            ));
        }
        Ok(n.dims2())
    }

    /// Applies a primitive by kind; arity is checked against the primitive.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            Primitive::MatMul | Primitive::Add | Primitive::Mul => 2,
            Primitive::EmbeddingLookup => {
                return Err(PinsError::rejected(
                    "embedding_lookup",
                    "use Tape::embedding, which takes token ids",
                ))
            }
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(PinsError::rejected(
                "apply",
                format!("{kind:?} takes {arity} inputs, got {}", inputs.len()),
            ));
        }
        match kind {
            Primitive::MatMul => self.matmul(inputs[0], inputs[1]),
            Primitive::Add => self.add(inputs[0], inputs[1]),
            Primitive::Mul => self.mul(inputs[0], inputs[1]),
            Primitive::Relu => Ok(self.relu(inputs[0])),
            Primitive::Gelu => Ok(self.gelu(inputs[0])),
            Primitive::SoftmaxRows => self.softmax_rows(inputs[0]),
            Primitive::LayerNormRows => self.layer_norm_rows(inputs[0]),
            Primitive::EmbeddingLookup => unreachable!(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(PinsError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(&self.node(a).value, &self.node(b).value, m, k, n);
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(vec![m, n], out, Op::MatMul(a.0, b.0), rg))
    }

    /// Broadcast rule shared by `add` and `mul`: equal shapes, or `b` is a
    /// single row (`[n]` or `[1, n]`) applied to every row of `a`.
    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(false);
        }
        let (_, ca) = self.node(a).dims2();
        let row_like = matches!(sb, [c] if *c == ca) || matches!(sb, [1, c] if *c == ca);
        if sa.len() == 2 && row_like {
            Ok(true)
        } else {
            Err(PinsError::shape(op, sa, sb))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_kind("add", a, b)?;
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        let n = bv.len();
        let out: Vec<f64> = if broadcast {
            av.iter().enumerate().map(|(i, &x)| x + bv[i % n]).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| x + y).collect()
        };
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(shape, out, Op::Add { a: a.0, b: b.0, broadcast }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_kind("mul", a, b)?;
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        let n = bv.len();
        let out: Vec<f64> = if broadcast {
            av.iter().enumerate().map(|(i, &x)| x * bv[i % n]).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| x * y).collect()
        };
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(shape, out, Op::Mul { a: a.0, b: b.0, broadcast }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.node(x).value.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(x.0);
        self.push(shape, out, Op::Relu(x.0), rg)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self
            .node(x)
            .value
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(x.0);
        self.push(shape, out, Op::Gelu(x.0), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.rank2("softmax_rows", x)?;
        let out = softmax_raw(&self.node(x).value, r, c);
        let rg = self.needs(x.0);
        Ok(self.push(vec![r, c], out, Op::SoftmaxRows(x.0), rg))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.rank2("layer_norm_rows", x)?;
        let xv = &self.node(x).value;
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = s;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean) * s;
            }
        }
        let rg = self.needs(x.0);
        Ok(self.push(
            vec![r, c],
            xhat.clone(),
            Op::LayerNormRows { x: x.0, xhat, rstd },
            rg,
        ))
    }

    /// Gathers rows of `table` (`vocab x dim`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.rank2("embedding_lookup", table)?;
        if ids.is_empty() {
            return Err(PinsError::rejected("embedding_lookup", "no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(PinsError::rejected(
                "embedding_lookup",
                format!("id {bad} out of range for vocabulary {vocab}"),
            ));
        }
        let tv = &self.node(table).value;
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        let rg = self.needs(table.0);
        Ok(self.push(
            vec![ids.len(), dim],
            out,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.node(x).value.iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(x.0);
        self.push(shape, out, Op::Scale(x.0, factor), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.rank2("transpose", x)?;
        let xv = &self.node(x).value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let rg = self.needs(x.0);
        Ok(self.push(vec![c, r], out, Op::Transpose(x.0), rg))
    }

    /// Columns `start..end` of a rank-2 node.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.rank2("slice_cols", x)?;
        if start >= end || end > c {
            return Err(PinsError::rejected(
                "slice_cols",
                format!("range {start}..{end} invalid for {c} columns"),
            ));
        }
        let w = end - start;
        let xv = &self.node(x).value;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + end]);
        }
        let rg = self.needs(x.0);
        Ok(self.push(vec![r, w], out, Op::SliceCols { x: x.0, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| PinsError::rejected("concat_cols", "no inputs"))?;
        let (r, _) = self.rank2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.rank2("concat_cols", p)?;
            if pr != r {
                return Err(PinsError::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.node(p).value[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|p| self.needs(p.0));
        Ok(self.push(
            vec![r, total],
            out,
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.node(x).value.iter().sum();
        let rg = self.needs(x.0);
        self.push(vec![1], vec![s], Op::Sum(x.0), rg)
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.rank2("cross_entropy", logits)?;
        if labels.len() != n {
            return Err(PinsError::shape("cross_entropy", &[n, k], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(PinsError::rejected(
                "cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let lv = &self.node(logits).value;
        let probs = softmax_raw(lv, n, k);
        let cap = -PROB_FLOOR.ln();
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv[i * k..(i + 1) * k];
            let nll = (log_sum_exp(row) - row[y]).min(cap);
            total += nll;
        }
        let rg = self.needs(logits.0);
        Ok(self.push(
            vec![1],
            vec![total / n as f64],
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean over rows of `KL(softmax(p_logits) || softmax(q_logits))`.
    /// Only `q_logits` receives a gradient.
    pub fn kl_divergence(&mut self, p_logits: Var, q_logits: Var) -> Result<Var> {
        self.kl_impl(p_logits, q_logits, false)
    }

    /// As [`Tape::kl_divergence`] but differentiable in both arguments.
    pub fn kl_divergence_both(&mut self, p_logits: Var, q_logits: Var) -> Result<Var> {
        self.kl_impl(p_logits, q_logits, true)
    }

    fn kl_impl(&mut self, p: Var, q: Var, grad_p: bool) -> Result<Var> {
        let (n, k) = self.rank2("kl_divergence", p)?;
        if self.shape(p) != self.shape(q) {
            return Err(PinsError::shape("kl_divergence", self.shape(p), self.shape(q)));
        }
        let (pv, qv) = (&self.node(p).value, &self.node(q).value);
        let p_probs = softmax_raw(pv, n, k);
        let q_probs = softmax_raw(qv, n, k);
        let floor = PROB_FLOOR.ln();
        let mut log_ratio = vec![0.0; n * k];
        let mut row_kl = vec![0.0; n];
        for i in 0..n {
            let (pr, qr) = (&pv[i * k..(i + 1) * k], &qv[i * k..(i + 1) * k]);
            let (lse_p, lse_q) = (log_sum_exp(pr), log_sum_exp(qr));
            let mut acc = 0.0;
            for j in 0..k {
                let lp = (pr[j] - lse_p).max(floor);
                let lq = (qr[j] - lse_q).max(floor);
                let d = lp - lq;
                log_ratio[i * k + j] = d;
                acc += p_probs[i * k + j] * d;
            }
            row_kl[i] = acc;
        }
        let value = row_kl.iter().sum::<f64>() / n as f64;
        let rg = self.needs(q.0) || (grad_p && self.needs(p.0));
        Ok(self.push(
            vec![1],
            vec![value],
            Op::KlDiv {
                p: p.0,
                q: q.0,
                p_probs,
                q_probs,
                log_ratio,
                row_kl,
                grad_p,
            },
            rg,
        ))
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.node(loss).value.len() != 1 {
            return Err(PinsError::rejected(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dout) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                adj[idx] = Some(dout);
                continue;
            }
            self.propagate(node, &dout, &mut adj);
            adj[idx] = Some(dout);
        }

        Ok(Gradients {
            adjoints: adj
                .into_iter()
                .enumerate()
                .map(|(i, a)| a.filter(|_| self.nodes[i].requires_grad))
                .collect(),
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
        })
    }

    fn propagate(&self, node: &Node, dout: &[f64], adj: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a].dims2();
                let (_, n) = self.nodes[b].dims2();
                if self.needs(a) {
                    let bv = &self.nodes[b].value;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += dout[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    accumulate(adj, a, da);
                }
                if self.needs(b) {
                    let av = &self.nodes[a].value;
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            let row = &dout[i * n..(i + 1) * n];
                            for (d, &g) in db[p * n..(p + 1) * n].iter_mut().zip(row) {
                                *d += x * g;
                            }
                        }
                    }
                    accumulate(adj, b, db);
                }
            }
            &Op::Add { a, b, broadcast } => {
                if self.needs(a) {
                    accumulate(adj, a, dout.to_vec());
                }
                if self.needs(b) {
                    accumulate(adj, b, reduce_rows(dout, self.nodes[b].value.len(), broadcast));
                }
            }
            &Op::Mul { a, b, broadcast } => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                let n = bv.len();
                if self.needs(a) {
                    let da = dout
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * bv[if broadcast { i % n } else { i }])
                        .collect();
                    accumulate(adj, a, da);
                }
                if self.needs(b) {
                    let prod: Vec<f64> = dout.iter().zip(av).map(|(&g, &x)| g * x).collect();
                    accumulate(adj, b, reduce_rows(&prod, n, broadcast));
                }
            }
            &Op::Relu(x) => {
                let xv = &self.nodes[x].value;
                let dx = dout
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                accumulate(adj, x, dx);
            }
            &Op::Gelu(x) => {
                let xv = &self.nodes[x].value;
                let dx = dout
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| {
                        let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                        g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .collect();
                accumulate(adj, x, dx);
            }
            &Op::SoftmaxRows(x) => {
                let (r, c) = node.dims2();
                let y = &node.value;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let s = i * c;
                    let dot: f64 = (0..c).map(|j| dout[s + j] * y[s + j]).sum();
                    for j in 0..c {
                        dx[s + j] = y[s + j] * (dout[s + j] - dot);
                    }
                }
                accumulate(adj, x, dx);
            }
            Op::LayerNormRows { x, xhat, rstd } => {
                let (r, c) = node.dims2();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let s = i * c;
                    let mean_g: f64 = dout[s..s + c].iter().sum::<f64>() / c as f64;
                    let mean_gx: f64 =
                        (0..c).map(|j| dout[s + j] * xhat[s + j]).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[s + j] = rstd[i] * (dout[s + j] - mean_g - xhat[s + j] * mean_gx);
                    }
                }
                accumulate(adj, *x, dx);
            }
            Op::Embedding { table, ids } => {
                let (vocab, dim) = self.nodes[*table].dims2();
                let mut dt = vec![0.0; vocab * dim];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..dim {
                        dt[id * dim + j] += dout[r * dim + j];
                    }
                }
                accumulate(adj, *table, dt);
            }
            &Op::Scale(x, f) => {
                accumulate(adj, x, dout.iter().map(|&g| g * f).collect());
            }
            &Op::Transpose(x) => {
                let (r, c) = self.nodes[x].dims2();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = dout[j * r + i];
                    }
                }
                accumulate(adj, x, dx);
            }
            &Op::SliceCols { x, start } => {
                let (r, c) = self.nodes[x].dims2();
                let (_, w) = node.dims2();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + w].copy_from_slice(&dout[i * w..(i + 1) * w]);
                }
                accumulate(adj, x, dx);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.dims2();
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.nodes[p].dims2();
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&dout[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(adj, p, dp);
                    }
                    offset += w;
                }
            }
            &Op::Sum(x) => {
                let n = self.nodes[x].value.len();
                accumulate(adj, x, vec![dout[0]; n]);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (n, k) = self.nodes[*logits].dims2();
                let scale = dout[0] / n as f64;
                let mut dx: Vec<f64> = probs.iter().map(|&p| p * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    dx[i * k + y] -= scale;
                }
                accumulate(adj, *logits, dx);
            }
            Op::KlDiv {
                p,
                q,
                p_probs,
                q_probs,
                log_ratio,
                row_kl,
                grad_p,
            } => {
                let (n, k) = self.nodes[*q].dims2();
                let scale = dout[0] / n as f64;
                if self.needs(*q) {
                    let dq = q_probs
                        .iter()
                        .zip(p_probs)
                        .map(|(&qq, &pp)| (qq - pp) * scale)
                        .collect();
                    accumulate(adj, *q, dq);
                }
                if *grad_p && self.needs(*p) {
                    let mut dp = vec![0.0; n * k];
                    for i in 0..n {
                        for j in 0..k {
                            let idx = i * k + j;
                            dp[idx] = p_probs[idx] * (log_ratio[idx] - row_kl[i]) * scale;
                        }
                    }
                    accumulate(adj, *p, dp);
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], idx: usize, grad: Vec<f64>) {
    match &mut adj[idx] {
        Some(existing) => {
            for (e, g) in existing.iter_mut().zip(grad) {
                *e += g;
            }
        }
        slot @ None => *slot = Some(grad),
    }
}

/// Column sums when `broadcast`, identity otherwise.
fn reduce_rows(g: &[f64], n: usize, broadcast: bool) -> Vec<f64> {
    if !broadcast {
        return g.to_vec();
    }
    let mut out = vec![0.0; n];
    for (i, &v) in g.iter().enumerate() {
        out[i % n] += v;
    }
    out
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_raw(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..c {
            let e = (row[j] - max).exp();
            out[i * c + j] = e;
            z += e;
        }
        for v in &mut out[i * c..(i + 1) * c] {
            *v /= z;
        }
    }
    out
}
