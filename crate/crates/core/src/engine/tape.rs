//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Every op appends a node holding its forward value plus whatever it needs
//! for the backward sweep. Ops are coarse (matmul, layer norm, fused causal
//! attention, masked NLL) so a transformer forward records a few dozen nodes
//! rather than one per scalar.
//!
//! Graph policy: [`Tape::backward`] borrows the tape immutably and returns a
//! fresh [`Grads`]; the tape is retained and may be differentiated again. It
//! is freed when dropped.

use super::tensor::{gemm, Tensor};
use super::EngineError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    AddBias { a: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: f64 },
    Gelu { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    MaskedNll { logits: Var, targets: Vec<usize>, mask: Vec<bool>, denom: f64, probs: Vec<f64> },
    Sum { a: Var },
    SumSquares { a: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. `v`; `None` when `v` does not require grad.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<(), EngineError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(EngineError::NonFinite { op })
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Copy of `v` cut from the graph; gradients never flow through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `a @ b` (or `a @ bᵀ` when `trans_b`).
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, EngineError> {
        let (m, k) = self.value(a).dims2();
        let (br, bc) = self.value(b).dims2();
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(EngineError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{m},{k}] x [{kb},{n}]"),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.value(a).data, false, &self.value(b).data, trans_b, &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul { a, b, trans_b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x + y).collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x * y).collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }, rg))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` value.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, EngineError> {
        let (_, n) = self.value(a).dims2();
        if self.value(bias).len() != n {
            return Err(EngineError::ShapeMismatch {
                op: "add_bias",
                detail: format!("row width {n}, bias {}", self.value(bias).len()),
            });
        }
        let b = &self.value(bias).data;
        let data = self.value(a).data.chunks(n).flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y)).collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Tensor { shape, data }, Op::AddBias { a, bias }, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let value = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|x| x * s).collect() };
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale { a, s }, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data.iter().map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())).collect();
        let value = Tensor { shape: t.shape.clone(), data };
        let rg = self.rg(&[a]);
        self.push(value, Op::Gelu { a }, rg)
    }

    /// Row-wise layer norm with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, EngineError> {
        let (rows, cols) = self.value(x).dims2();
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(EngineError::ShapeMismatch { op: "layer_norm", detail: format!("width {cols}") });
        }
        let xv = &self.value(x).data;
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let shape = self.value(x).shape.clone();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(Tensor { shape, data: out }, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// Fused multi-head causal self-attention over `[T, d]` q/k/v.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, EngineError> {
        let (t_len, d) = self.value(q).dims2();
        if self.value(k).dims2() != (t_len, d) || self.value(v).dims2() != (t_len, d) || heads == 0 || d % heads != 0 {
            return Err(EngineError::ShapeMismatch { op: "attention", detail: format!("[{t_len},{d}] with {heads} heads") });
        }
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qv, kv, vv) = (&self.value(q).data, &self.value(k).data, &self.value(v).data);
        let mut probs = vec![0.0; heads * t_len * t_len];
        let mut out = vec![0.0; t_len * d];
        for h in 0..heads {
            let off = h * hd;
            for t in 0..t_len {
                let qrow = &qv[t * d + off..t * d + off + hd];
                let prow = &mut probs[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=t {
                    let krow = &kv[j * d + off..j * d + off + hd];
                    let s = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                    prow[j] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for p in prow.iter_mut().take(t + 1) {
                    *p = (*p - max).exp();
                    z += *p;
                }
                for p in prow.iter_mut().take(t + 1) {
                    *p /= z;
                }
                let orow = &mut out[t * d + off..t * d + off + hd];
                for j in 0..=t {
                    let pj = prow[j];
                    let vrow = &vv[j * d + off..j * d + off + hd];
                    for (o, x) in orow.iter_mut().zip(vrow) {
                        *o += pj * x;
                    }
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(Tensor { shape: vec![t_len, d], data: out }, Op::Attention { q, k, v, heads, probs }, rg))
    }

    /// Head-averaged attention probabilities `[T, T]` of an attention node.
    pub fn attention_probs_mean(&self, node: Var) -> Option<Tensor> {
        match &self.nodes[node.0].op {
            Op::Attention { heads, probs, .. } => {
                let t_len = self.nodes[node.0].value.shape[0];
                let mut avg = vec![0.0; t_len * t_len];
                for h in 0..*heads {
                    for (a, p) in avg.iter_mut().zip(&probs[h * t_len * t_len..(h + 1) * t_len * t_len]) {
                        *a += p;
                    }
                }
                let inv = 1.0 / *heads as f64;
                avg.iter_mut().for_each(|a| *a *= inv);
                Some(Tensor { shape: vec![t_len, t_len], data: avg })
            }
            _ => None,
        }
    }

    /// Selects rows of a 2-D table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, EngineError> {
        let (rows, cols) = self.value(table).dims2();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(EngineError::IndexOutOfRange { index: i, len: rows });
            }
            data.extend_from_slice(self.value(table).row(i));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(Tensor { shape: vec![ids.len(), cols], data }, Op::Gather { table, ids: ids.to_vec() }, rg))
    }

    /// Sum over masked positions of `-log softmax(logits[t])[targets[t]]`,
    /// divided by `denom`. Masked-out positions are skipped entirely, so their
    /// targets never touch the result.
    pub fn masked_nll(&mut self, logits: Var, targets: &[usize], mask: &[bool], denom: f64) -> Result<Var, EngineError> {
        let (rows, vocab) = self.value(logits).dims2();
        if targets.len() != rows || mask.len() != rows {
            return Err(EngineError::ShapeMismatch {
                op: "masked_nll",
                detail: format!("{rows} rows, {} targets, {} mask", targets.len(), mask.len()),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(EngineError::EmptyMask);
        }
        let lv = &self.value(logits).data;
        let mut probs = vec![0.0; rows * vocab];
        let mut total = 0.0;
        for t in 0..rows {
            if !mask[t] {
                continue;
            }
            if targets[t] >= vocab {
                return Err(EngineError::IndexOutOfRange { index: targets[t], len: vocab });
            }
            let row = &lv[t * vocab..(t + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[targets[t]];
            for (p, x) in probs[t * vocab..(t + 1) * vocab].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let rg = self.rg(&[logits]);
        let op = Op::MaskedNll { logits, targets: targets.to_vec(), mask: mask.to_vec(), denom, probs };
        Ok(self.push(Tensor::scalar(total / denom), op, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumSquares { a }, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), EngineError> {
        if self.value(a).shape != self.value(b).shape {
            return Err(EngineError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.value(a).shape, self.value(b).shape),
            });
        }
        Ok(())
    }

    /// Exact reverse-mode gradients of the scalar `loss` w.r.t. every node
    /// that requires grad.
    pub fn backward(&self, loss: Var) -> Result<Grads, EngineError> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(EngineError::NotScalar { shape: root.value.shape.clone() });
        }
        if !root.requires_grad {
            return Err(EngineError::Detached);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                if !n.requires_grad {
                    return None;
                }
                Some(match g {
                    Some(data) => Tensor { shape: n.value.shape.clone(), data },
                    None => Tensor::zeros(&n.value.shape),
                })
            })
            .collect::<Vec<_>>();
        for g in grads.iter().flatten() {
            check_finite("backward", g)?;
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.value(*a).dims2();
                let n = node.value.dims2().1;
                if self.requires_grad(*a) {
                    // dA = dC · op(B)ᵀ
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, &self.value(*b).data, !*trans_b, ga, true);
                }
                if self.requires_grad(*b) {
                    let gb = slot(grads, *b, k * n);
                    if *trans_b {
                        // B is [n, k]: dB = dCᵀ · A
                        gemm(n, m, k, g, true, &self.value(*a).data, false, gb, true);
                    } else {
                        // dB = Aᵀ · dC
                        gemm(k, m, n, &self.value(*a).data, true, g, false, gb, true);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.requires_grad(*v) {
                        axpy(slot(grads, *v, g.len()), g, 1.0);
                    }
                }
            }
            Op::AddBias { a, bias } => {
                if self.requires_grad(*a) {
                    axpy(slot(grads, *a, g.len()), g, 1.0);
                }
                if self.requires_grad(*bias) {
                    let n = self.value(*bias).len();
                    let gb = slot(grads, *bias, n);
                    for row in g.chunks(n) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                if self.requires_grad(*a) {
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale { a, s } => {
                if self.requires_grad(*a) {
                    axpy(slot(grads, *a, g.len()), g, *s);
                }
            }
            Op::Gelu { a } => {
                if self.requires_grad(*a) {
                    let x = &self.value(*a).data;
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        let xi = x[i];
                        let u = GELU_C * (xi + 0.044715 * xi * xi * xi);
                        let th = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * xi * xi);
                        let d = 0.5 * (1.0 + th) + 0.5 * xi * (1.0 - th * th) * du;
                        ga[i] += g[i] * d;
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let cols = self.value(*gain).len();
                let rows = rstd.len();
                let gv = &self.value(*gain).data;
                if self.requires_grad(*gain) {
                    let gg = slot(grads, *gain, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            gg[c] += g[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                }
                if self.requires_grad(*bias) {
                    let gb = slot(grads, *bias, cols);
                    for row in g.chunks(cols) {
                        axpy(gb, row, 1.0);
                    }
                }
                if self.requires_grad(*x) {
                    let gx = slot(grads, *x, rows * cols);
                    let inv_n = 1.0 / cols as f64;
                    for r in 0..rows {
                        let base = r * cols;
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..cols {
                            let dh = g[base + c] * gv[c];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[base + c];
                        }
                        for c in 0..cols {
                            let dh = g[base + c] * gv[c];
                            gx[base + c] += rstd[r] * (dh - inv_n * sum_dh - xhat[base + c] * inv_n * sum_dh_h);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (t_len, d) = self.value(*q).dims2();
                let hd = d / heads;
                let scale = 1.0 / (hd as f64).sqrt();
                let (qv, kv, vv) = (&self.value(*q).data, &self.value(*k).data, &self.value(*v).data);
                let mut dq = vec![0.0; t_len * d];
                let mut dk = vec![0.0; t_len * d];
                let mut dv = vec![0.0; t_len * d];
                let mut dp = vec![0.0; t_len];
                for h in 0..*heads {
                    let off = h * hd;
                    for t in 0..t_len {
                        let prow = &probs[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                        let go = &g[t * d + off..t * d + off + hd];
                        let mut dot = 0.0;
                        for j in 0..=t {
                            let vrow = &vv[j * d + off..j * d + off + hd];
                            dp[j] = go.iter().zip(vrow).map(|(a, b)| a * b).sum();
                            dot += prow[j] * dp[j];
                            let dvrow = &mut dv[j * d + off..j * d + off + hd];
                            for (dvx, gx) in dvrow.iter_mut().zip(go) {
                                *dvx += prow[j] * gx;
                            }
                        }
                        let qrow = &qv[t * d + off..t * d + off + hd];
                        for j in 0..=t {
                            let ds = prow[j] * (dp[j] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let krow = &kv[j * d + off..j * d + off + hd];
                            for i in 0..hd {
                                dq[t * d + off + i] += ds * krow[i];
                                dk[j * d + off + i] += ds * qrow[i];
                            }
                        }
                    }
                }
                for (var, gradv) in [(q, dq), (k, dk), (v, dv)] {
                    if self.requires_grad(*var) {
                        axpy(slot(grads, *var, t_len * d), &gradv, 1.0);
                    }
                }
            }
            Op::Gather { table, ids } => {
                if self.requires_grad(*table) {
                    let (rows, cols) = self.value(*table).dims2();
                    let gt = slot(grads, *table, rows * cols);
                    for (r, &i) in ids.iter().enumerate() {
                        axpy(&mut gt[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols], 1.0);
                    }
                }
            }
            Op::MaskedNll { logits, targets, mask, denom, probs } => {
                if self.requires_grad(*logits) {
                    let (rows, vocab) = self.value(*logits).dims2();
                    let gl = slot(grads, *logits, rows * vocab);
                    let s = g[0] / denom;
                    for t in 0..rows {
                        if !mask[t] {
                            continue;
                        }
                        let row = &mut gl[t * vocab..(t + 1) * vocab];
                        for (x, p) in row.iter_mut().zip(&probs[t * vocab..(t + 1) * vocab]) {
                            *x += s * p;
                        }
                        row[targets[t]] -= s;
                    }
                }
            }
            Op::Sum { a } => {
                if self.requires_grad(*a) {
                    let n = self.value(*a).len();
                    slot(grads, *a, n).iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::SumSquares { a } => {
                if self.requires_grad(*a) {
                    let av = &self.value(*a).data;
                    let ga = slot(grads, *a, av.len());
                    for (x, y) in ga.iter_mut().zip(av) {
                        *x += 2.0 * y * g[0];
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
