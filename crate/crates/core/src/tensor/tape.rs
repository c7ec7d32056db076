//! Reverse-mode autodiff on an append-only tape.
//!
//! Operations push entries in execution order, which is already a topological
//! order, so the backward pass is a single reverse sweep. Gradients
//! accumulate in fixed (ascending input index) order everywhere, keeping
//! training bitwise reproducible.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{check_same_shape, matmul_nn, matmul_nt, matmul_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: ValueId, b: ValueId },
    AddBias { x: ValueId, bias: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Scale { x: ValueId, factor: f64 },
    LeakyRelu { x: ValueId, slope: f64 },
    ConcatCols { parts: Vec<ValueId> },
    GatherRows { src: ValueId, index: Rc<Vec<usize>> },
    ScatterMean { src: ValueId, index: Rc<Vec<usize>>, counts: Vec<usize> },
    ScatterSum { src: ValueId, index: Rc<Vec<usize>> },
    MseLoss { pred: ValueId, target: ValueId },
}

struct Entry {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one scalar with respect to every tape value that needed them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.entries[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> ValueId {
        self.entries.push(Entry { value, op, needs_grad });
        ValueId(self.entries.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.entries[id.0].needs_grad
    }

    /// Constant input: no gradient is tracked through it.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input: gradients accumulate here.
    pub fn param(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = matmul_nn(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul { a, b }, needs))
    }

    /// Add a 1 x d bias row to every row of x.
    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        {
            let (xv, bv) = (self.value(x), self.value(bias));
            if bv.rows() != 1 || bv.cols() != xv.cols() {
                return Err(Error::Shape(format!(
                    "bias {}x{} against {}x{}",
                    bv.rows(),
                    bv.cols(),
                    xv.rows(),
                    xv.cols()
                )));
            }
        }
        let bias_row: Vec<f64> = self.value(bias).row(0).to_vec();
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            for (out, b) in value.row_mut(r).iter_mut().zip(&bias_row) {
                *out += b;
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddBias { x, bias }, needs))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        check_same_shape(self.value(a), self.value(b), "add")?;
        let mut value = self.value(a).clone();
        for (v, w) in value.as_mut_slice().iter_mut().zip(self.entries[b.0].value.as_slice()) {
            *v += w;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        check_same_shape(self.value(a), self.value(b), "sub")?;
        let mut value = self.value(a).clone();
        for (v, w) in value.as_mut_slice().iter_mut().zip(self.entries[b.0].value.as_slice()) {
            *v -= w;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub { a, b }, needs))
    }

    pub fn scale(&mut self, x: ValueId, factor: f64) -> ValueId {
        let value = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(value, Op::Scale { x, factor }, needs)
    }

    pub fn leaky_relu(&mut self, x: ValueId, slope: f64) -> ValueId {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let needs = self.needs(x);
        self.push(value, Op::LeakyRelu { x, slope }, needs)
    }

    /// Concatenate tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of nothing".into()));
        }
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols with mismatched row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols { parts: parts.to_vec() }, needs))
    }

    /// out[i] = src[index[i]]. Duplicate indices are allowed; their
    /// gradients accumulate.
    pub fn gather_rows(&mut self, src: ValueId, index: Rc<Vec<usize>>) -> Result<ValueId> {
        let (src_rows, cols) = self.value(src).shape();
        for &i in index.iter() {
            if i >= src_rows {
                return Err(Error::IndexOutOfRange { index: i, len: src_rows });
            }
        }
        let mut value = Tensor::zeros(index.len(), cols);
        let s = self.value(src);
        for (out_r, &src_r) in index.iter().enumerate() {
            value.row_mut(out_r).copy_from_slice(s.row(src_r));
        }
        let needs = self.needs(src);
        Ok(self.push(value, Op::GatherRows { src, index }, needs))
    }

    /// out[r] = mean of src rows e with index[e] == r, for r in 0..out_rows.
    /// Rows with no contributors stay zero. Contributions are summed in
    /// ascending e order, then divided once, so the result is deterministic.
    pub fn scatter_mean(
        &mut self,
        src: ValueId,
        index: Rc<Vec<usize>>,
        out_rows: usize,
    ) -> Result<ValueId> {
        let (value, counts) = self.scatter_forward(src, &index, out_rows, true)?;
        let needs = self.needs(src);
        Ok(self.push(value, Op::ScatterMean { src, index, counts }, needs))
    }

    /// Like scatter_mean but without the division. With a bijective index
    /// this permutes rows, which the model uses to reassemble partitioned
    /// edge updates.
    pub fn scatter_sum(
        &mut self,
        src: ValueId,
        index: Rc<Vec<usize>>,
        out_rows: usize,
    ) -> Result<ValueId> {
        let (value, _) = self.scatter_forward(src, &index, out_rows, false)?;
        let needs = self.needs(src);
        Ok(self.push(value, Op::ScatterSum { src, index }, needs))
    }

    fn scatter_forward(
        &self,
        src: ValueId,
        index: &[usize],
        out_rows: usize,
        mean: bool,
    ) -> Result<(Tensor, Vec<usize>)> {
        let s = self.value(src);
        if index.len() != s.rows() {
            return Err(Error::Shape(format!(
                "scatter index length {} against {} source rows",
                index.len(),
                s.rows()
            )));
        }
        for &r in index {
            if r >= out_rows {
                return Err(Error::IndexOutOfRange { index: r, len: out_rows });
            }
        }
        let cols = s.cols();
        let mut out = Tensor::zeros(out_rows, cols);
        let mut counts = vec![0usize; out_rows];
        for (e, &r) in index.iter().enumerate() {
            counts[r] += 1;
            let src_row = s.row(e);
            let dst_row = &mut out.as_mut_slice()[r * cols..(r + 1) * cols];
            for (d, v) in dst_row.iter_mut().zip(src_row) {
                *d += v;
            }
        }
        if mean {
            for (r, &count) in counts.iter().enumerate() {
                if count > 1 {
                    let inv = 1.0 / count as f64;
                    for v in &mut out.as_mut_slice()[r * cols..(r + 1) * cols] {
                        *v *= inv;
                    }
                }
            }
        }
        Ok((out, counts))
    }

    /// Mean squared error over all elements, as a 1x1 tensor.
    pub fn mse_loss(&mut self, pred: ValueId, target: ValueId) -> Result<ValueId> {
        check_same_shape(self.value(pred), self.value(target), "mse_loss")?;
        let p = self.value(pred);
        let t = self.value(target);
        let n = p.numel();
        let value = if n == 0 {
            0.0
        } else {
            let mut acc = 0.0;
            for (a, b) in p.as_slice().iter().zip(t.as_slice()) {
                let d = a - b;
                acc += d * d;
            }
            acc / n as f64
        };
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(value), Op::MseLoss { pred, target }, needs))
    }

    /// Gradients of the scalar at `root` with respect to every value that
    /// requires them.
    pub fn backward(&self, root: ValueId) -> Gradients {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.entries.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            if !self.entries[idx].needs_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            match &self.entries[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(grad);
                    continue;
                }
                Op::MatMul { a, b } => {
                    if self.needs(*a) {
                        let da = matmul_nt(&grad, self.value(*b)).expect("shape checked");
                        accumulate(&mut grads, a.0, da);
                    }
                    if self.needs(*b) {
                        let db = matmul_tn(self.value(*a), &grad).expect("shape checked");
                        accumulate(&mut grads, b.0, db);
                    }
                }
                Op::AddBias { x, bias } => {
                    if self.needs(*bias) {
                        let mut db = Tensor::zeros(1, grad.cols());
                        for r in 0..grad.rows() {
                            for (d, g) in db.row_mut(0).iter_mut().zip(grad.row(r)) {
                                *d += g;
                            }
                        }
                        accumulate(&mut grads, bias.0, db);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, x.0, grad);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads, a.0, grad.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, b.0, grad);
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads, a.0, grad.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, b.0, grad.map(|v| -v));
                    }
                }
                Op::Scale { x, factor } => {
                    if self.needs(*x) {
                        accumulate(&mut grads, x.0, grad.map(|v| v * factor));
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    if self.needs(*x) {
                        let input = self.value(*x);
                        let mut dx = grad;
                        for (d, &v) in dx.as_mut_slice().iter_mut().zip(input.as_slice()) {
                            if v <= 0.0 {
                                *d *= slope;
                            }
                        }
                        accumulate(&mut grads, x.0, dx);
                    }
                }
                Op::ConcatCols { parts } => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs(p) {
                            let mut dp = Tensor::zeros(grad.rows(), w);
                            for r in 0..grad.rows() {
                                dp.row_mut(r).copy_from_slice(&grad.row(r)[at..at + w]);
                            }
                            accumulate(&mut grads, p.0, dp);
                        }
                        at += w;
                    }
                }
                Op::GatherRows { src, index } => {
                    if self.needs(*src) {
                        let s = self.value(*src);
                        let mut ds = Tensor::zeros(s.rows(), s.cols());
                        for (out_r, &src_r) in index.iter().enumerate() {
                            let g = grad.row(out_r);
                            let dst = ds.row_mut(src_r);
                            for (d, v) in dst.iter_mut().zip(g) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, src.0, ds);
                    }
                }
                Op::ScatterMean { src, index, counts } => {
                    if self.needs(*src) {
                        let s = self.value(*src);
                        let mut ds = Tensor::zeros(s.rows(), s.cols());
                        for (e, &r) in index.iter().enumerate() {
                            let inv = 1.0 / counts[r] as f64;
                            let g = grad.row(r);
                            let dst = ds.row_mut(e);
                            for (d, v) in dst.iter_mut().zip(g) {
                                *d += v * inv;
                            }
                        }
                        accumulate(&mut grads, src.0, ds);
                    }
                }
                Op::ScatterSum { src, index } => {
                    if self.needs(*src) {
                        let s = self.value(*src);
                        let mut ds = Tensor::zeros(s.rows(), s.cols());
                        for (e, &r) in index.iter().enumerate() {
                            let g = grad.row(r);
                            let dst = ds.row_mut(e);
                            for (d, v) in dst.iter_mut().zip(g) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, src.0, ds);
                    }
                }
                Op::MseLoss { pred, target } => {
                    let p = self.value(*pred);
                    let t = self.value(*target);
                    let n = p.numel();
                    if n == 0 {
                        continue;
                    }
                    let g = grad.item();
                    let scale = 2.0 * g / n as f64;
                    if self.needs(*pred) {
                        let mut dp = Tensor::zeros(p.rows(), p.cols());
                        for ((d, a), b) in
                            dp.as_mut_slice().iter_mut().zip(p.as_slice()).zip(t.as_slice())
                        {
                            *d = scale * (a - b);
                        }
                        accumulate(&mut grads, pred.0, dp);
                    }
                    if self.needs(*target) {
                        let mut dt = Tensor::zeros(p.rows(), p.cols());
                        for ((d, a), b) in
                            dt.as_mut_slice().iter_mut().zip(p.as_slice()).zip(t.as_slice())
                        {
                            *d = -scale * (a - b);
                        }
                        accumulate(&mut grads, target.0, dt);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, delta: Tensor) {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, d) in existing.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
