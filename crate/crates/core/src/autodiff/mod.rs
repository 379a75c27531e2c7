//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation in execution order; [`Tape::backward`]
//! walks it in exact reverse, accumulating into gradient slots. Handles are
//! plain indices tagged with the id of the tape that created them, so a
//! variable from one tape cannot silently be used on another.

mod gradcheck;
mod tensor;

use std::sync::atomic::{AtomicU64, Ordering};

pub use gradcheck::{grad_check, GradCheckReport};
pub use tensor::Tensor;

use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Bmm(usize, usize),
    BmmNt(usize, usize),
    SlotMatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Relu(usize),
    Softmax(usize),
    LayerNorm { x: usize, inv_std: Vec<f64> },
    SumAxis { x: usize, axis: usize },
    SumAll(usize),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    Reshape(usize),
    Mse { pred: usize, target: Tensor },
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// How the second operand of a broadcasting op maps onto the first.
enum Broadcast {
    Same,
    /// `b` matches a suffix of `a`'s shape exactly.
    Cycle(usize),
    Map(Vec<usize>),
}

impl Broadcast {
    fn plan(a: &[usize], b: &[usize]) -> Option<Broadcast> {
        if a == b {
            return Some(Broadcast::Same);
        }
        if b.len() > a.len() {
            return None;
        }
        let off = a.len() - b.len();
        if a[off..] == *b {
            return Some(Broadcast::Cycle(b.iter().product::<usize>().max(1)));
        }
        if b.iter().zip(&a[off..]).any(|(bd, ad)| *bd != 1 && bd != ad) {
            return None;
        }
        // general right-aligned broadcast with unit axes
        let mut bstrides = vec![0usize; a.len()];
        let mut s = 1;
        for ax in (0..b.len()).rev() {
            if b[ax] != 1 {
                bstrides[off + ax] = s;
            }
            s *= b[ax];
        }
        let total: usize = a.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; a.len()];
        for _ in 0..total {
            map.push(idx.iter().zip(&bstrides).map(|(i, st)| i * st).sum());
            for ax in (0..a.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < a[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Some(Broadcast::Map(map))
    }

    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Cycle(n) => i % n,
            Broadcast::Map(m) => m[i],
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Autodiff("variable does not belong to this tape".into()));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.check(v).expect("foreign variable")].value
    }

    /// Gradient slot of `v`, populated by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.check(v).ok().and_then(|i| self.grads.get(i)?.as_ref())
    }

    // ---- forward primitives ----

    /// `a[..., k] · w[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ia, iw) = (self.check(a)?, self.check(w)?);
        let (av, wv) = (self.val(ia), self.val(iw));
        if av.ndim() == 0 || wv.ndim() != 2 || av.last_dim() != wv.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), wv.shape()),
            ));
        }
        let (m, k, n) = (av.leading(), wv.shape()[0], wv.shape()[1]);
        let out = gemm(av.data(), wv.data(), m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("ndim >= 1") = n;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul(ia, iw), &[ia, iw]))
    }

    /// Batched `a[B,m,k] · b[B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        if av.ndim() != 3 || bv.ndim() != 3 || av.shape()[0] != bv.shape()[0] || av.shape()[2] != bv.shape()[1] {
            return Err(Error::shape("bmm", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
        let mut out = Vec::with_capacity(bs * m * n);
        for b in 0..bs {
            out.extend(gemm(&av.data()[b * m * k..(b + 1) * m * k], &bv.data()[b * k * n..(b + 1) * k * n], m, k, n));
        }
        let value = Tensor::new(&[bs, m, n], out)?;
        Ok(self.push(value, Op::Bmm(ia, ib), &[ia, ib]))
    }

    /// Batched `a[B,m,k] · b[B,n,k]ᵀ -> [B,m,n]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        if av.ndim() != 3 || bv.ndim() != 3 || av.shape()[0] != bv.shape()[0] || av.shape()[2] != bv.shape()[2] {
            return Err(Error::shape("bmm_nt", format!("{:?} x {:?}ᵀ", av.shape(), bv.shape())));
        }
        let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[1]);
        let mut out = vec![0.0; bs * m * n];
        for b in 0..bs {
            let ab = &av.data()[b * m * k..(b + 1) * m * k];
            let bb = &bv.data()[b * n * k..(b + 1) * n * k];
            for i in 0..m {
                for j in 0..n {
                    out[(b * m + i) * n + j] = dot(&ab[i * k..(i + 1) * k], &bb[j * k..(j + 1) * k]);
                }
            }
        }
        let value = Tensor::new(&[bs, m, n], out)?;
        Ok(self.push(value, Op::BmmNt(ia, ib), &[ia, ib]))
    }

    /// Slot-wise product `x[B,T,d] · w[T,d,e] -> [B,T,e]`: every position `t`
    /// along the middle axis has its own weight matrix.
    pub fn slot_matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let (xv, wv) = (self.val(ix), self.val(iw));
        if xv.ndim() != 3 || wv.ndim() != 3 || xv.shape()[1] != wv.shape()[0] || xv.shape()[2] != wv.shape()[1] {
            return Err(Error::shape("slot_matmul", format!("{:?} x {:?}", xv.shape(), wv.shape())));
        }
        let (bs, t, d, e) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], wv.shape()[2]);
        let mut out = vec![0.0; bs * t * e];
        for b in 0..bs {
            for s in 0..t {
                let xrow = &xv.data()[(b * t + s) * d..(b * t + s + 1) * d];
                let wm = &wv.data()[s * d * e..(s + 1) * d * e];
                let orow = &mut out[(b * t + s) * e..(b * t + s + 1) * e];
                for (i, xi) in xrow.iter().enumerate() {
                    for (o, wij) in orow.iter_mut().zip(&wm[i * e..(i + 1) * e]) {
                        *o += xi * wij;
                    }
                }
            }
        }
        let value = Tensor::new(&[bs, t, e], out)?;
        Ok(self.push(value, Op::SlotMatMul(ix, iw), &[ix, iw]))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(usize, usize, Tensor)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        let plan = Broadcast::plan(av.shape(), bv.shape())
            .ok_or_else(|| Error::shape(name, format!("{:?} with {:?}", av.shape(), bv.shape())))?;
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| f(*x, bv.data()[plan.index(i)]))
            .collect();
        Ok((ia, ib, Tensor::new(av.shape(), data)?))
    }

    /// `a + b`, with `b` broadcast onto `a` (right-aligned, unit axes stretch).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, v) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(ia, ib), &[ia, ib]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, v) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(ia, ib), &[ia, ib]))
    }

    /// Element-wise product with `b` broadcast onto `a`.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, v) = self.binary(a, b, "hadamard", |x, y| x * y)?;
        Ok(self.push(v, Op::Hadamard(ia, ib), &[ia, ib]))
    }

    /// Adds a row vector to every row of `x`.
    pub fn broadcast_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (ix, ir) = (self.check(x)?, self.check(row)?);
        if self.val(ir).ndim() != 1 || self.val(ir).len() != self.val(ix).last_dim() {
            return Err(Error::shape(
                "broadcast_row",
                format!("{:?} with row {:?}", self.val(ix).shape(), self.val(ir).shape()),
            ));
        }
        self.add(x, row)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.map(ia, |x| x * s);
        Ok(self.push(v, Op::Scale(ia, s), &[ia]))
    }

    fn map(&self, i: usize, f: impl Fn(f64) -> f64) -> Tensor {
        let src = self.val(i);
        Tensor::new(src.shape(), src.data().iter().map(|x| f(*x)).collect()).expect("same shape")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.map(ia, f64::tanh);
        Ok(self.push(v, Op::Tanh(ia), &[ia]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.map(ia, |x| if x > 0.0 { x } else { 0.0 });
        Ok(self.push(v, Op::Relu(ia), &[ia]))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let src = self.val(ia);
        let c = src.last_dim();
        if c == 0 || src.ndim() == 0 {
            return Err(Error::shape("softmax_rows", "empty rows"));
        }
        let mut out = src.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let v = Tensor::new(src.shape(), out)?;
        Ok(self.push(v, Op::Softmax(ia), &[ia]))
    }

    /// Zero-mean, unit-variance normalization over the last axis with `eps`
    /// added to the variance. No affine part; see [`Tape::layer_norm_rows`].
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let src = self.val(ia);
        let c = src.last_dim();
        if c == 0 || src.ndim() == 0 {
            return Err(Error::shape("layer_norm_rows", "empty rows"));
        }
        let mut out = src.data().to_vec();
        let mut inv_std = Vec::with_capacity(src.leading());
        for row in out.chunks_exact_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let v = Tensor::new(src.shape(), out)?;
        Ok(self.push(v, Op::LayerNorm { x: ia, inv_std }, &[ia]))
    }

    /// Layer normalization over the last axis followed by a learnable gain
    /// and offset (both vectors of the last axis' length).
    pub fn layer_norm_rows(&mut self, a: Var, gain: Var, offset: Var, eps: f64) -> Result<Var> {
        let n = self.normalize_rows(a, eps)?;
        let g = self.hadamard(n, gain)?;
        self.broadcast_row(g, offset)
    }

    /// Sums out one axis.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let src = self.val(ia);
        if axis >= src.ndim() {
            return Err(Error::shape("sum_axis", format!("axis {axis} of {:?}", src.shape())));
        }
        let (outer, len, inner) = axis_split(src.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src.data()[base + i];
                }
            }
        }
        let mut shape = src.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::SumAxis { x: ia, axis }, &[ia]))
    }

    /// Sums over the second-to-last axis: `[.., R, C] -> [.., C]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let nd = self.value(a).ndim();
        if nd < 2 {
            return Err(Error::shape("sum_rows", "needs at least two axes"));
        }
        self.sum_axis(a, nd - 2)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = Tensor::scalar(self.val(ia).data().iter().sum());
        Ok(self.push(v, Op::SumAll(ia), &[ia]))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let src = self.val(ia);
        let c = src.last_dim();
        if src.ndim() == 0 || start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{} of {:?}", start + len, src.shape()),
            ));
        }
        let mut out = Vec::with_capacity(src.leading() * len);
        for row in src.data().chunks_exact(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = src.shape().to_vec();
        *shape.last_mut().expect("ndim >= 1") = len;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::SliceCols { x: ia, start }, &[ia]))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|p| self.check(*p)).collect::<Result<Vec<_>>>()?;
        let first = idx
            .first()
            .map(|&i| self.val(i).shape().to_vec())
            .ok_or_else(|| Error::shape("concat_cols", "nothing to concatenate"))?;
        let lead = &first[..first.len().saturating_sub(1)];
        if first.is_empty() || idx.iter().any(|&i| {
            let s = self.val(i).shape();
            s.len() != first.len() || &s[..s.len() - 1] != lead
        }) {
            return Err(Error::shape("concat_cols", "leading axes differ"));
        }
        let widths: Vec<usize> = idx.iter().map(|&i| self.val(i).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let rows = self.val(idx[0]).leading();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &w) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.val(i).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = first.clone();
        *shape.last_mut().expect("ndim >= 1") = total;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::ConcatCols(idx.clone()), &idx))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.val(ia).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(ia), &[ia]))
    }

    /// Mean squared error against a fixed target of the same shape.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let ip = self.check(pred)?;
        let pv = self.val(ip);
        if pv.len() != target.len() || pv.is_empty() {
            return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", pv.shape(), target.shape())));
        }
        let sse: f64 = pv.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        let v = Tensor::scalar(sse / pv.len() as f64);
        Ok(self.push(
            v,
            Op::Mse {
                pred: ip,
                target: target.clone(),
            },
            &[ip],
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of `logits[N, c]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.check(logits)?;
        let lv = self.val(il);
        if lv.ndim() != 2 || lv.shape()[0] != labels.len() || labels.is_empty() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} for {} labels", lv.shape(), labels.len()),
            ));
        }
        let c = lv.shape()[1];
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!("label {bad} outside 0..{c}")));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_exact_mut(c).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let v = Tensor::scalar(loss / labels.len() as f64);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
            &[il],
        ))
    }

    // ---- reverse sweep ----

    /// Back-propagates from a scalar `loss`, filling every reachable
    /// gradient slot. Slots accumulate across multiple uses of a value.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        if self.val(il).len() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                self.val(il).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[il] = Some(Tensor::filled(self.val(il).shape(), 1.0));
        for i in (0..=il).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[j].needs_grad {
                return;
            }
            let slot = grads[j].get_or_insert_with(|| Tensor::zeros(self.nodes[j].value.shape()));
            f(slot.data_mut());
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, w) => {
                let (av, wv) = (self.val(*a), self.val(*w));
                let (m, k, n) = (av.leading(), wv.shape()[0], wv.shape()[1]);
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        for p in 0..k {
                            ga[r * k + p] += dot(&gd[r * n..(r + 1) * n], &wv.data()[p * n..(p + 1) * n]);
                        }
                    }
                });
                acc(*w, &mut |gw| {
                    for r in 0..m {
                        let grow = &gd[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = av.data()[r * k + p];
                            for (o, gv) in gw[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * gv;
                            }
                        }
                    }
                });
            }
            Op::Bmm(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                acc(*a, &mut |ga| {
                    for s in 0..bs {
                        for r in 0..m {
                            for p in 0..k {
                                ga[(s * m + r) * k + p] += dot(
                                    &gd[(s * m + r) * n..(s * m + r + 1) * n],
                                    &bv.data()[(s * k + p) * n..(s * k + p + 1) * n],
                                );
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for s in 0..bs {
                        for r in 0..m {
                            let grow = &gd[(s * m + r) * n..(s * m + r + 1) * n];
                            for p in 0..k {
                                let x = av.data()[(s * m + r) * k + p];
                                let dst = &mut gb[(s * k + p) * n..(s * k + p + 1) * n];
                                for (o, gv) in dst.iter_mut().zip(grow) {
                                    *o += x * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::BmmNt(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[1]);
                acc(*a, &mut |ga| {
                    for s in 0..bs {
                        for r in 0..m {
                            for j in 0..n {
                                let gv = gd[(s * m + r) * n + j];
                                let brow = &bv.data()[(s * n + j) * k..(s * n + j + 1) * k];
                                for (o, bvv) in ga[(s * m + r) * k..(s * m + r + 1) * k].iter_mut().zip(brow) {
                                    *o += gv * bvv;
                                }
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for s in 0..bs {
                        for r in 0..m {
                            let arow = &av.data()[(s * m + r) * k..(s * m + r + 1) * k];
                            for j in 0..n {
                                let gv = gd[(s * m + r) * n + j];
                                for (o, avv) in gb[(s * n + j) * k..(s * n + j + 1) * k].iter_mut().zip(arow) {
                                    *o += gv * avv;
                                }
                            }
                        }
                    }
                });
            }
            Op::SlotMatMul(x, w) => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (bs, t, d, e) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], wv.shape()[2]);
                acc(*x, &mut |gx| {
                    for b in 0..bs {
                        for s in 0..t {
                            let grow = &gd[(b * t + s) * e..(b * t + s + 1) * e];
                            let wm = &wv.data()[s * d * e..(s + 1) * d * e];
                            for i in 0..d {
                                gx[(b * t + s) * d + i] += dot(grow, &wm[i * e..(i + 1) * e]);
                            }
                        }
                    }
                });
                acc(*w, &mut |gw| {
                    for b in 0..bs {
                        for s in 0..t {
                            let grow = &gd[(b * t + s) * e..(b * t + s + 1) * e];
                            let xrow = &xv.data()[(b * t + s) * d..(b * t + s + 1) * d];
                            for (i, xi) in xrow.iter().enumerate() {
                                let dst = &mut gw[(s * d + i) * e..(s * d + i + 1) * e];
                                for (o, gv) in dst.iter_mut().zip(grow) {
                                    *o += xi * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, &mut |ga| {
                    for (o, gv) in ga.iter_mut().zip(gd) {
                        *o += gv;
                    }
                });
                let plan = Broadcast::plan(out.shape(), self.val(*b).shape()).expect("validated in forward");
                acc(*b, &mut |gb| {
                    for (idx, gv) in gd.iter().enumerate() {
                        gb[plan.index(idx)] += sign * gv;
                    }
                });
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let plan = Broadcast::plan(av.shape(), bv.shape()).expect("validated in forward");
                acc(*a, &mut |ga| {
                    for (idx, gv) in gd.iter().enumerate() {
                        ga[idx] += gv * bv.data()[plan.index(idx)];
                    }
                });
                acc(*b, &mut |gb| {
                    for (idx, gv) in gd.iter().enumerate() {
                        gb[plan.index(idx)] += gv * av.data()[idx];
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| {
                for (o, gv) in ga.iter_mut().zip(gd) {
                    *o += s * gv;
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((o, gv), y) in ga.iter_mut().zip(gd).zip(out.data()) {
                    *o += gv * (1.0 - y * y);
                }
            }),
            Op::Relu(a) => acc(*a, &mut |ga| {
                for ((o, gv), y) in ga.iter_mut().zip(gd).zip(out.data()) {
                    if *y > 0.0 {
                        *o += gv;
                    }
                }
            }),
            Op::Softmax(a) => {
                let c = out.last_dim();
                acc(*a, &mut |ga| {
                    for ((grow, yrow), orow) in gd.chunks_exact(c).zip(out.data().chunks_exact(c)).zip(ga.chunks_exact_mut(c)) {
                        let s = dot(grow, yrow);
                        for ((o, gv), y) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += y * (gv - s);
                        }
                    }
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let c = out.last_dim();
                let cf = c as f64;
                acc(*x, &mut |gx| {
                    for (r, ((grow, yrow), orow)) in gd
                        .chunks_exact(c)
                        .zip(out.data().chunks_exact(c))
                        .zip(gx.chunks_exact_mut(c))
                        .enumerate()
                    {
                        let mean_g = grow.iter().sum::<f64>() / cf;
                        let mean_gy = dot(grow, yrow) / cf;
                        for ((o, gv), y) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += inv_std[r] * (gv - mean_g - y * mean_gy);
                        }
                    }
                });
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(self.val(*x).shape(), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for idx in 0..inner {
                                gx[base + idx] += gd[o * inner + idx];
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => acc(*a, &mut |ga| {
                for o in ga.iter_mut() {
                    *o += gd[0];
                }
            }),
            Op::SliceCols { x, start } => {
                let c = self.val(*x).last_dim();
                let len = out.last_dim();
                acc(*x, &mut |gx| {
                    for (grow, xrow) in gd.chunks_exact(len).zip(gx.chunks_exact_mut(c)) {
                        for (o, gv) in xrow[*start..start + len].iter_mut().zip(grow) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = self.val(p).last_dim();
                    acc(p, &mut |gp| {
                        for (grow, prow) in gd.chunks_exact(total).zip(gp.chunks_exact_mut(w)) {
                            for (o, gv) in prow.iter_mut().zip(&grow[offset..offset + w]) {
                                *o += gv;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Reshape(a) => acc(*a, &mut |ga| {
                for (o, gv) in ga.iter_mut().zip(gd) {
                    *o += gv;
                }
            }),
            Op::Mse { pred, target } => {
                let pv = self.val(*pred);
                let scale = 2.0 * gd[0] / pv.len() as f64;
                acc(*pred, &mut |gp| {
                    for ((o, p), t) in gp.iter_mut().zip(pv.data()).zip(target.data()) {
                        *o += scale * (p - t);
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.val(*logits).last_dim();
                let scale = gd[0] / labels.len() as f64;
                acc(*logits, &mut |gl| {
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * bv;
            }
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
