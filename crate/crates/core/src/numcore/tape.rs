//! Reverse-mode differentiation over a per-forward tape.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Values are
//! computed eagerly; [`Tape::backward`] walks the records in reverse and
//! returns a [`Gradients`] table indexed by node. Parameters are bound with
//! [`Tape::param`], which remembers the parameter name so gradients can be
//! accumulated back into a [`ParamSet`].

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use super::{NumError, ParamSet, Tensor};

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `a + b` where `b` broadcasts over rows and/or columns of `a`.
    Add(usize, usize),
    Sub(usize, usize),
    /// `a ⊙ b` where `b` broadcasts like in `Add`.
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Minimum(usize, usize),
    SumAll(usize),
    RowSum(usize),
    MaskedSoftmax(usize),
    WeightedSoftmax(usize, usize, Rc<Vec<bool>>),
    StraightThrough(usize),
    Cols(usize, usize),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Rc<Vec<usize>>),
    ConcatRows(Vec<usize>),
    BlockScores(usize, usize, usize),
    BlockApply(usize, usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn value_of(&self, idx: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[idx].value)
    }

    /// Records a constant input. Gradients are still computed for it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Binds the named parameter. Binding the same name twice returns the
    /// same node.
    pub fn param(&self, params: &ParamSet, name: &str) -> Result<Var<'_>, NumError> {
        if let Some(&idx) = self.params.borrow().get(name) {
            return Ok(Var { tape: self, idx });
        }
        let value = params
            .get(name)
            .ok_or_else(|| NumError::MissingParam(name.to_string()))?
            .clone();
        let var = self.push(value, Op::Leaf);
        self.params.borrow_mut().insert(name.to_string(), var.idx);
        Ok(var)
    }

    /// Runs the reverse pass from a `[1, 1]` output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, NumError> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.idx].value;
        if out.len() != 1 {
            return Err(NumError::Dimension(format!(
                "backward needs a scalar output, got {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.idx] = Some(Tensor::full(out.shape(), 1.0));
        for idx in (0..=output.idx).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            backprop_node(&nodes, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self.params.borrow().clone();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Sums `g` down to the broadcast shape `target`.
fn reduce_to(g: &Tensor, target: &Tensor) -> Tensor {
    if g.same_shape(target) {
        return g.clone();
    }
    let (r, c) = (g.rows(), g.cols());
    let (tr, tc) = (target.rows(), target.cols());
    let mut out = Tensor::zeros(target.shape());
    for i in 0..r {
        for j in 0..c {
            let ti = if tr == 1 { 0 } else { i };
            let tj = if tc == 1 { 0 } else { j };
            out.data_mut()[ti * tc + tj] += g.data()[i * c + j];
        }
    }
    out
}

fn broadcast_compatible(a: &Tensor, b: &Tensor) -> bool {
    (b.rows() == a.rows() || b.rows() == 1) && (b.cols() == a.cols() || b.cols() == 1)
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.same_shape(b) {
        return a.zip_map(b, f);
    }
    let (r, c) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let mut out = a.clone();
    for i in 0..r {
        for j in 0..c {
            let bi = if br == 1 { 0 } else { i };
            let bj = if bc == 1 { 0 } else { j };
            let v = &mut out.data_mut()[i * c + j];
            *v = f(*v, b.data()[bi * bc + bj]);
        }
    }
    out
}

fn backprop_node(nodes: &[Node], idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let y = &nodes[idx].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[idx].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            accumulate(grads, *a, g.matmul_t(val(*b)));
            accumulate(grads, *b, val(*a).t_matmul(g));
        }
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, reduce_to(g, val(*b)));
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, reduce_to(&g.map(|v| -v), val(*b)));
        }
        Op::Mul(a, b) => {
            accumulate(grads, *a, broadcast_zip(g, val(*b), |gv, bv| gv * bv));
            let ga = g.zip_map(val(*a), |gv, av| gv * av);
            accumulate(grads, *b, reduce_to(&ga, val(*b)));
        }
        Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
        Op::AddConst(a) => accumulate(grads, *a, g.clone()),
        Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))),
        Op::Tanh(a) => accumulate(grads, *a, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))),
        Op::Relu(a) => accumulate(
            grads,
            *a,
            g.zip_map(val(*a), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
        ),
        Op::Exp(a) => accumulate(grads, *a, g.zip_map(y, |gv, yv| gv * yv)),
        Op::Square(a) => accumulate(grads, *a, g.zip_map(val(*a), |gv, xv| 2.0 * gv * xv)),
        Op::Clamp(a, lo, hi) => accumulate(
            grads,
            *a,
            g.zip_map(val(*a), |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 }),
        ),
        Op::Minimum(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let mut ga = g.clone();
            let mut gb = g.clone();
            for i in 0..g.len() {
                if av.data()[i] <= bv.data()[i] {
                    gb.data_mut()[i] = 0.0;
                } else {
                    ga.data_mut()[i] = 0.0;
                }
            }
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::SumAll(a) => accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item())),
        Op::RowSum(a) => {
            let x = val(*a);
            let mut out = Tensor::zeros(x.shape());
            let c = x.cols();
            for i in 0..x.rows() {
                let gi = g.data()[i];
                out.row_slice_mut(i).iter_mut().for_each(|v| *v = gi);
            }
            debug_assert_eq!(out.cols(), c);
            accumulate(grads, *a, out);
        }
        Op::MaskedSoftmax(a) => {
            let mut out = Tensor::zeros(y.shape());
            for i in 0..y.rows() {
                let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                for (o, (p, q)) in out.row_slice_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                    *o = p * (q - dot);
                }
            }
            accumulate(grads, *a, out);
        }
        Op::WeightedSoftmax(d, m, mask) => {
            let (dv, mv) = (val(*d), val(*m));
            let cols = y.cols();
            let mut gd = Tensor::zeros(y.shape());
            let mut gm = Tensor::zeros(y.shape());
            for i in 0..y.rows() {
                let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                let row_mask = &mask[i * cols..(i + 1) * cols];
                let (dr, mr) = (dv.row_slice(i), mv.row_slice(i));
                let (shift, z) = weighted_softmax_normalizer(dr, mr, row_mask);
                for j in 0..cols {
                    if !row_mask[j] {
                        continue;
                    }
                    gd.row_slice_mut(i)[j] = yr[j] * (gr[j] - dot);
                    let e = (dr[j] - shift).min(60.0).exp() / z;
                    gm.row_slice_mut(i)[j] = e * (gr[j] - dot);
                }
            }
            accumulate(grads, *d, gd);
            accumulate(grads, *m, gm);
        }
        Op::StraightThrough(a) => accumulate(grads, *a, g.clone()),
        Op::Cols(a, start) => {
            let x = val(*a);
            let mut out = Tensor::zeros(x.shape());
            let w = g.cols();
            for i in 0..x.rows() {
                out.row_slice_mut(i)[*start..start + w].copy_from_slice(g.row_slice(i));
            }
            accumulate(grads, *a, out);
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let x = val(p);
                let w = x.cols();
                let mut out = Tensor::zeros(x.shape());
                for i in 0..x.rows() {
                    out.row_slice_mut(i)
                        .copy_from_slice(&g.row_slice(i)[offset..offset + w]);
                }
                offset += w;
                accumulate(grads, p, out);
            }
        }
        Op::GatherRows(a, rows) => {
            let x = val(*a);
            let mut out = Tensor::zeros(x.shape());
            for (k, &r) in rows.iter().enumerate() {
                for (o, v) in out.row_slice_mut(r).iter_mut().zip(g.row_slice(k)) {
                    *o += v;
                }
            }
            accumulate(grads, *a, out);
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let x = val(p);
                let n = x.len();
                let out = Tensor::new(x.shape().to_vec(), g.data()[offset..offset + n].to_vec())
                    .expect("concat rows slice");
                offset += n;
                accumulate(grads, p, out);
            }
        }
        Op::BlockScores(q, k, n) => {
            let (qv, kv) = (val(*q), val(*k));
            let d = qv.cols();
            let mut gq = Tensor::zeros(qv.shape());
            let mut gk = Tensor::zeros(kv.shape());
            for row in 0..qv.rows() {
                let base = (row / n) * n;
                let gr = g.row_slice(row);
                for j in 0..*n {
                    let s = gr[j];
                    if s == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        gq.data_mut()[row * d + c] += s * kv.data()[(base + j) * d + c];
                        gk.data_mut()[(base + j) * d + c] += s * qv.data()[row * d + c];
                    }
                }
            }
            accumulate(grads, *q, gq);
            accumulate(grads, *k, gk);
        }
        Op::BlockApply(p, v, n) => {
            let (pv, vv) = (val(*p), val(*v));
            let d = vv.cols();
            let mut gp = Tensor::zeros(pv.shape());
            let mut gv = Tensor::zeros(vv.shape());
            for row in 0..pv.rows() {
                let base = (row / n) * n;
                let gr = g.row_slice(row);
                for j in 0..*n {
                    let vr = &vv.data()[(base + j) * d..(base + j + 1) * d];
                    gp.data_mut()[row * n + j] = gr.iter().zip(vr).map(|(a, b)| a * b).sum();
                    let w = pv.data()[row * n + j];
                    if w == 0.0 {
                        continue;
                    }
                    for (o, gc) in gv.data_mut()[(base + j) * d..(base + j + 1) * d]
                        .iter_mut()
                        .zip(gr)
                    {
                        *o += w * gc;
                    }
                }
            }
            accumulate(grads, *p, gp);
            accumulate(grads, *v, gv);
        }
    }
}

/// Shift and partition function of `m ⊙ exp(d)` over the unmasked entries
/// with positive weight.
fn weighted_softmax_normalizer(d: &[f64], m: &[f64], mask: &[bool]) -> (f64, f64) {
    let shift = d
        .iter()
        .zip(m)
        .zip(mask)
        .filter(|((_, &w), &ok)| ok && w > 0.0)
        .map(|((&x, _), _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let z = d
        .iter()
        .zip(m)
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|((&x, &w), _)| w * (x - shift).exp())
        .sum();
    (shift, z)
}

/// Row-wise softmax restricted to `mask`; masked entries are exactly zero.
pub(crate) fn masked_softmax_values(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, NumError> {
    let cols = x.cols();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.rows() {
        let row = x.row_slice(i);
        let keep = |j: usize| mask.is_none_or(|m| m[i * cols + j]);
        let max = (0..cols)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(NumError::DegenerateRow(i));
        }
        let o = out.row_slice_mut(i);
        let mut total = 0.0;
        for j in 0..cols {
            if keep(j) {
                o[j] = (row[j] - max).exp();
                total += o[j];
            }
        }
        o.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value_of(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    fn check_same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.value().map(f);
        self.tape.push(value, op)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.check_same_tape(&other);
        let value = self.value().matmul(&other.value())?;
        Ok(self.tape.push(value, Op::MatMul(self.idx, other.idx)))
    }

    fn broadcast_binary(
        &self,
        other: Var<'t>,
        name: &str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>, NumError> {
        self.check_same_tape(&other);
        let value = {
            let (a, b) = (self.value(), other.value());
            if !broadcast_compatible(&a, &b) {
                return Err(NumError::Dimension(format!(
                    "{name}: cannot broadcast {:?} onto {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
            broadcast_zip(&a, &b, f)
        };
        Ok(self.tape.push(value, op))
    }

    /// Elementwise sum; `other` may broadcast as a row, a column or a scalar.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.broadcast_binary(other, "add", Op::Add(self.idx, other.idx), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.broadcast_binary(other, "sub", Op::Sub(self.idx, other.idx), |a, b| a - b)
    }

    /// Elementwise product; `other` may broadcast.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.broadcast_binary(other, "mul", Op::Mul(self.idx, other.idx), |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.idx, s), |v| v * s)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        self.unary(Op::AddConst(self.idx), |v| v + s)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.idx), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.idx), f64::tanh)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.idx), |v| v.max(0.0))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.idx), f64::exp)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.idx), |v| v * v)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.idx, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn minimum(&self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.check_same_tape(&other);
        let value = {
            let (a, b) = (self.value(), other.value());
            if !a.same_shape(&b) {
                return Err(NumError::Dimension(format!(
                    "minimum: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            a.zip_map(&b, f64::min)
        };
        Ok(self.tape.push(value, Op::Minimum(self.idx, other.idx)))
    }

    pub fn sum(&self) -> Var<'t> {
        let value = Tensor::scalar(self.value().sum());
        self.tape.push(value, Op::SumAll(self.idx))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// `[r, c] -> [r, 1]`.
    pub fn row_sum(&self) -> Var<'t> {
        let value = {
            let x = self.value();
            let sums: Vec<f64> = (0..x.rows()).map(|i| x.row_slice(i).iter().sum()).collect();
            Tensor::new(vec![x.rows(), 1], sums).expect("row sums")
        };
        self.tape.push(value, Op::RowSum(self.idx))
    }

    /// Row-wise softmax; entries where `mask` is false get exactly zero.
    pub fn softmax_rows(&self, mask: Option<&[bool]>) -> Result<Var<'t>, NumError> {
        let value = {
            let x = self.value();
            if let Some(m) = mask {
                if m.len() != x.len() {
                    return Err(NumError::Dimension(format!(
                        "softmax mask has {} entries for {:?}",
                        m.len(),
                        x.shape()
                    )));
                }
            }
            masked_softmax_values(&x, mask)?
        };
        Ok(self.tape.push(value, Op::MaskedSoftmax(self.idx)))
    }

    /// Row-wise `α_ij = m_ij exp(d_ij) / Σ_l m_il exp(d_il)` over `mask`.
    ///
    /// Equivalent to a softmax of `d + ln m`, so zero weights drop out of
    /// the neighborhood while the gradient with respect to `m` stays defined.
    pub fn weighted_softmax_rows(&self, weights: Var<'t>, mask: Rc<Vec<bool>>) -> Result<Var<'t>, NumError> {
        self.check_same_tape(&weights);
        let value = {
            let (d, m) = (self.value(), weights.value());
            if !d.same_shape(&m) || mask.len() != d.len() {
                return Err(NumError::Dimension(format!(
                    "weighted softmax: scores {:?}, weights {:?}, mask {}",
                    d.shape(),
                    m.shape(),
                    mask.len()
                )));
            }
            let cols = d.cols();
            let mut out = Tensor::zeros(d.shape());
            for i in 0..d.rows() {
                let row_mask = &mask[i * cols..(i + 1) * cols];
                let (dr, mr) = (d.row_slice(i), m.row_slice(i));
                let (shift, z) = weighted_softmax_normalizer(dr, mr, row_mask);
                if !(z > 0.0) {
                    return Err(NumError::DegenerateRow(i));
                }
                let o = out.row_slice_mut(i);
                for j in 0..cols {
                    if row_mask[j] && mr[j] > 0.0 {
                        o[j] = mr[j] * (dr[j] - shift).exp() / z;
                    }
                }
            }
            out
        };
        Ok(self
            .tape
            .push(value, Op::WeightedSoftmax(self.idx, weights.idx, mask)))
    }

    /// Forward: one-hot of each row's argmax. Backward: identity, so the
    /// gradient is that of the soft input.
    pub fn straight_through_one_hot(&self) -> Var<'t> {
        let value = {
            let x = self.value();
            let mut out = Tensor::zeros(x.shape());
            for i in 0..x.rows() {
                let row = x.row_slice(i);
                let best = row
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (j, &v)| {
                            if v > acc.1 {
                                (j, v)
                            } else {
                                acc
                            }
                        },
                    )
                    .0;
                out.row_slice_mut(i)[best] = 1.0;
            }
            out
        };
        self.tape.push(value, Op::StraightThrough(self.idx))
    }

    /// Columns `start..start + len`.
    pub fn cols_slice(&self, start: usize, len: usize) -> Result<Var<'t>, NumError> {
        let value = {
            let x = self.value();
            if start + len > x.cols() {
                return Err(NumError::Dimension(format!(
                    "column slice {start}..{} out of {}",
                    start + len,
                    x.cols()
                )));
            }
            let mut data = Vec::with_capacity(x.rows() * len);
            for i in 0..x.rows() {
                data.extend_from_slice(&x.row_slice(i)[start..start + len]);
            }
            Tensor::new(vec![x.rows(), len], data)?
        };
        Ok(self.tape.push(value, Op::Cols(self.idx, start)))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>, NumError> {
        let tape = parts
            .first()
            .ok_or_else(|| NumError::Dimension("concat of nothing".into()))?
            .tape;
        let value = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| p.value()).collect();
            let rows = vals[0].rows();
            if vals.iter().any(|v| v.rows() != rows) {
                return Err(NumError::Dimension("concat_cols row counts differ".into()));
            }
            let cols: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row_slice(i));
                }
            }
            Tensor::new(vec![rows, cols], data)?
        };
        Ok(tape.push(value, Op::ConcatCols(parts.iter().map(|p| p.idx).collect())))
    }

    pub fn gather_rows(&self, rows: Rc<Vec<usize>>) -> Result<Var<'t>, NumError> {
        let value = {
            let x = self.value();
            if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
                return Err(NumError::Dimension(format!("row {bad} out of {}", x.rows())));
            }
            let mut data = Vec::with_capacity(rows.len() * x.cols());
            for &r in rows.iter() {
                data.extend_from_slice(x.row_slice(r));
            }
            Tensor::new(vec![rows.len(), x.cols()], data)?
        };
        Ok(self.tape.push(value, Op::GatherRows(self.idx, rows)))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>, NumError> {
        let tape = parts
            .first()
            .ok_or_else(|| NumError::Dimension("concat of nothing".into()))?
            .tape;
        let value = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| p.value()).collect();
            let cols = vals[0].cols();
            if vals.iter().any(|v| v.cols() != cols) {
                return Err(NumError::Dimension("concat_rows column counts differ".into()));
            }
            let rows: usize = vals.iter().map(|v| v.rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for v in &vals {
                data.extend_from_slice(v.data());
            }
            Tensor::new(vec![rows, cols], data)?
        };
        Ok(tape.push(value, Op::ConcatRows(parts.iter().map(|p| p.idx).collect())))
    }

    /// Per-block scores for stacked graphs of `n` nodes: row `b*n + i`,
    /// column `j` holds `q[b*n + i] · k[b*n + j]`.
    pub fn block_scores(&self, keys: Var<'t>, n: usize) -> Result<Var<'t>, NumError> {
        self.check_same_tape(&keys);
        let value = {
            let (q, k) = (self.value(), keys.value());
            if q.rows() != k.rows() || q.cols() != k.cols() || n == 0 || q.rows() % n != 0 {
                return Err(NumError::Dimension(format!(
                    "block_scores: q {:?}, k {:?}, block {n}",
                    q.shape(),
                    k.shape()
                )));
            }
            let d = q.cols();
            let mut out = Tensor::zeros(&[q.rows(), n]);
            for row in 0..q.rows() {
                let base = (row / n) * n;
                let qr = q.row_slice(row);
                for j in 0..n {
                    let kr = &k.data()[(base + j) * d..(base + j + 1) * d];
                    out.data_mut()[row * n + j] = qr.iter().zip(kr).map(|(a, b)| a * b).sum();
                }
            }
            out
        };
        Ok(self.tape.push(value, Op::BlockScores(self.idx, keys.idx, n)))
    }

    /// Per-block weighted sum: row `b*n + i` is `Σ_j p[b*n + i, j] v[b*n + j]`.
    pub fn block_apply(&self, values: Var<'t>, n: usize) -> Result<Var<'t>, NumError> {
        self.check_same_tape(&values);
        let value = {
            let (p, v) = (self.value(), values.value());
            if p.cols() != n || p.rows() != v.rows() || n == 0 || p.rows() % n != 0 {
                return Err(NumError::Dimension(format!(
                    "block_apply: weights {:?}, values {:?}, block {n}",
                    p.shape(),
                    v.shape()
                )));
            }
            let d = v.cols();
            let mut out = Tensor::zeros(&[p.rows(), d]);
            for row in 0..p.rows() {
                let base = (row / n) * n;
                for j in 0..n {
                    let w = p.data()[row * n + j];
                    if w == 0.0 {
                        continue;
                    }
                    let vr = &v.data()[(base + j) * d..(base + j + 1) * d];
                    for (o, x) in out.data_mut()[row * d..(row + 1) * d].iter_mut().zip(vr) {
                        *o += w * x;
                    }
                }
            }
            out
        };
        Ok(self.tape.push(value, Op::BlockApply(self.idx, values.idx, n)))
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<String, usize>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.idx).and_then(Option::as_ref)
    }

    /// Adds every bound parameter's gradient into its accumulator.
    pub fn accumulate_into(&self, params: &mut ParamSet) -> Result<(), NumError> {
        for (name, &idx) in &self.params {
            if let Some(g) = &self.grads[idx] {
                params.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rule_through_matmul_and_sum() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let w = tape.constant(Tensor::from_rows(&[[3.0], [4.0]]).unwrap());
        let y = x.matmul(w).unwrap().square().sum();
        assert_eq!(y.value().item(), 121.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(w).unwrap().data(), &[22.0, 44.0]);
        assert_eq!(g.wrt(x).unwrap().data(), &[66.0, 88.0]);
    }

    #[test]
    fn straight_through_forwards_hard_backwards_identity() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::from_rows(&[[0.2, 0.5, 0.3]]).unwrap());
        let h = p.straight_through_one_hot();
        assert_eq!(h.value().data(), &[0.0, 1.0, 0.0]);
        let w = tape.constant(Tensor::row(&[1.0, 2.0, 3.0]));
        let y = h.mul(w).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(p).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn weighted_softmax_with_unit_weights_is_softmax() {
        let tape = Tape::new();
        let d = tape.constant(Tensor::from_rows(&[[0.3, -1.0, 2.0]]).unwrap());
        let m = tape.constant(Tensor::row(&[1.0, 1.0, 1.0]));
        let a = d
            .weighted_softmax_rows(m, Rc::new(vec![true, true, true]))
            .unwrap();
        let b = d.softmax_rows(None).unwrap();
        assert!(a.value().max_abs_diff(&b.value()) < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(x).is_err());
    }
}
