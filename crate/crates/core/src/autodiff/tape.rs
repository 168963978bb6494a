//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in exact reverse recording order and accumulates
//! gradients sequentially, so results are bitwise reproducible.

use std::sync::atomic::{AtomicU32, Ordering};

use super::tensor::{affine_raw, axpy, matmul_raw, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    idx: u32,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    Tanh {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    Relu {
        a: usize,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    SliceCols {
        a: usize,
        start: usize,
    },
    StackRows {
        parts: Vec<usize>,
    },
    SliceRows {
        a: usize,
        start: usize,
    },
    SumBlocks {
        a: usize,
        block: usize,
    },
    BlockAttention {
        q: usize,
        k: usize,
        v: usize,
        block: usize,
        probs: Vec<f64>,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mse {
        pred: usize,
        target: usize,
    },
    SumSquares {
        parts: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of differentiable operations.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn require_matrix(op: &'static str, name: &str, t: &Tensor) -> Result<(usize, usize)> {
    if !t.is_matrix() {
        return Err(Error::shape(
            op,
            format!("{name} must be 2-D, got shape {:?}", t.shape()),
        ));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest `|input|` over every ReLU on the tape, i.e. how far the
    /// recorded point is from the nearest kink; infinite without ReLUs.
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { a } => Some(self.val(a)),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: (self.nodes.len() - 1) as u32,
        }
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx as usize >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.idx as usize)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Register a trainable parameter.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Register a non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.index(v)?;
        Ok(self.val(i))
    }

    /// `x (n x d_in) * w^T (d_out x d_in) + b (d_out)`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.affine_impl(x, w, Some(b))
    }

    /// `a (n x k) * b^T` where `b` is `m x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.affine_impl(a, b, None)
    }

    fn affine_impl(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.index(x)?, self.index(w)?);
        let bi = b.map(|b| self.index(b)).transpose()?;
        let (n, d_in) = require_matrix("affine", "x", self.val(xi))?;
        let (d_out, wk) = require_matrix("affine", "W", self.val(wi))?;
        if wk != d_in {
            return Err(Error::shape(
                "affine",
                format!("x is {n}x{d_in} but W is {d_out}x{wk} (W columns must equal x columns)"),
            ));
        }
        if let Some(bi) = bi {
            let bl = self.val(bi).len();
            if bl != d_out {
                return Err(Error::shape(
                    "affine",
                    format!("W has {d_out} rows but bias b has {bl} entries"),
                ));
            }
        }
        let out = affine_raw(
            self.val(xi).data(),
            n,
            d_in,
            self.val(wi).data(),
            d_out,
            bi.map(|bi| self.val(bi).data()),
        );
        let value = Tensor::from_parts(vec![n, d_out], out);
        Ok(self.push(
            value,
            Op::Affine {
                x: xi,
                w: wi,
                b: bi,
            },
        ))
    }

    /// `a (n x k) * b (k x m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (n, k) = require_matrix("matmul", "a", self.val(ai))?;
        let (kb, m) = require_matrix("matmul", "b", self.val(bi))?;
        if k != kb {
            return Err(Error::shape(
                "matmul",
                format!("a is {n}x{k} but b is {kb}x{m}"),
            ));
        }
        let out = matmul_raw(self.val(ai).data(), n, k, self.val(bi).data(), m);
        Ok(self.push(
            Tensor::from_parts(vec![n, m], out),
            Op::MatMul { a: ai, b: bi },
        ))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (ta, tb) = (self.val(ai), self.val(bi));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                name,
                format!("operands have shapes {:?} and {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(value, op(ai, bi)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ai = self.index(a)?;
        let value = self.val(ai).map(|v| v * factor);
        Ok(self.push(value, Op::Scale { a: ai, factor }))
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var> {
        let ai = self.index(a)?;
        let value = self.val(ai).map(f);
        Ok(self.push(value, op(ai)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, |a| Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, |a| Op::Sigmoid { a })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |v| v.max(0.0), |a| Op::Relu { a })
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat_cols input"));
        }
        let idx = parts
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<Vec<_>>>()?;
        let rows = require_matrix("concat_cols", "operand 0", self.val(idx[0]))?.0;
        let mut total = 0;
        for (n, &i) in idx.iter().enumerate() {
            let (r, c) = require_matrix("concat_cols", "operand", self.val(i))?;
            if r != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("operand {n} has {r} rows, expected {rows}"),
                ));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.val(i).row_slice(r));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols { parts: idx },
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ai = self.index(a)?;
        let (rows, cols) = require_matrix("slice_cols", "a", self.val(ai))?;
        if len == 0 || start + len > cols {
            return Err(Error::shape(
                "slice_cols",
                format!(
                    "columns {start}..{} out of range for width {cols}",
                    start + len
                ),
            ));
        }
        let src = self.val(ai);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row_slice(r)[start..start + len]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, len], data),
            Op::SliceCols { a: ai, start },
        ))
    }

    /// Stack matrices with equal column counts vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("stack_rows input"));
        }
        let idx = parts
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<Vec<_>>>()?;
        let cols = require_matrix("stack_rows", "operand 0", self.val(idx[0]))?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for (n, &i) in idx.iter().enumerate() {
            let (r, c) = require_matrix("stack_rows", "operand", self.val(i))?;
            if c != cols {
                return Err(Error::shape(
                    "stack_rows",
                    format!("operand {n} has {c} columns, expected {cols}"),
                ));
            }
            rows += r;
            data.extend_from_slice(self.val(i).data());
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::StackRows { parts: idx },
        ))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ai = self.index(a)?;
        let (rows, cols) = require_matrix("slice_rows", "a", self.val(ai))?;
        if len == 0 || start + len > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} out of range for {rows} rows", start + len),
            ));
        }
        let data = self.val(ai).data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(
            Tensor::from_parts(vec![len, cols], data),
            Op::SliceRows { a: ai, start },
        ))
    }

    /// Sum each consecutive block of `block` rows: `(n*block) x d -> n x d`.
    pub fn sum_blocks(&mut self, a: Var, block: usize) -> Result<Var> {
        let ai = self.index(a)?;
        let (rows, cols) = require_matrix("sum_blocks", "a", self.val(ai))?;
        if block == 0 || rows % block != 0 {
            return Err(Error::shape(
                "sum_blocks",
                format!("{rows} rows are not a multiple of block {block}"),
            ));
        }
        let n = rows / block;
        let src = self.val(ai);
        let mut data = vec![0.0; n * cols];
        for r in 0..rows {
            let b = r / block;
            axpy(&mut data[b * cols..(b + 1) * cols], 1.0, src.row_slice(r));
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, cols], data),
            Op::SumBlocks { a: ai, block },
        ))
    }

    /// Single-head scaled dot-product attention applied independently to each
    /// block of `block` consecutive rows.
    ///
    /// `q`, `k`, `v` are `(n*block) x d`. Within a block,
    /// `out = softmax(q k^T / sqrt(d)) v`.
    pub fn block_attention(&mut self, q: Var, k: Var, v: Var, block: usize) -> Result<Var> {
        let (qi, ki, vi) = (self.index(q)?, self.index(k)?, self.index(v)?);
        let (rows, d) = require_matrix("block_attention", "q", self.val(qi))?;
        for (name, i) in [("k", ki), ("v", vi)] {
            if self.val(i).shape() != [rows, d] {
                return Err(Error::shape(
                    "block_attention",
                    format!(
                        "{name} has shape {:?}, q has [{rows}, {d}]",
                        self.val(i).shape()
                    ),
                ));
            }
        }
        if block == 0 || rows % block != 0 {
            return Err(Error::shape(
                "block_attention",
                format!("{rows} rows are not a multiple of block {block}"),
            ));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (
            self.val(qi).data(),
            self.val(ki).data(),
            self.val(vi).data(),
        );
        let mut probs = vec![0.0; rows * block];
        let mut out = vec![0.0; rows * d];
        for base in (0..rows).step_by(block) {
            for i in 0..block {
                let qr = &qd[(base + i) * d..(base + i + 1) * d];
                let prow = &mut probs[(base + i) * block..(base + i + 1) * block];
                for j in 0..block {
                    let kr = &kd[(base + j) * d..(base + j + 1) * d];
                    prow[j] = qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(prow);
                let orow = &mut out[(base + i) * d..(base + i + 1) * d];
                for j in 0..block {
                    axpy(orow, prow[j], &vd[(base + j) * d..(base + j + 1) * d]);
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, d], out),
            Op::BlockAttention {
                q: qi,
                k: ki,
                v: vi,
                block,
                probs,
            },
        ))
    }

    /// Attention weights recorded by a [`Tape::block_attention`] node, as
    /// `(n*block) x block` rows.
    pub fn attention_weights(&self, out: Var) -> Result<Tensor> {
        let i = self.index(out)?;
        match &self.nodes[i].op {
            Op::BlockAttention { probs, block, .. } => Ok(Tensor::from_parts(
                vec![probs.len() / block, *block],
                probs.clone(),
            )),
            _ => Err(Error::shape("attention_weights", "not an attention node")),
        }
    }

    /// Row-wise layer normalization with elementwise affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xi, gi, bi) = (self.index(x)?, self.index(gamma)?, self.index(beta)?);
        let (rows, d) = require_matrix("layer_norm", "x", self.val(xi))?;
        if self.val(gi).len() != d || self.val(bi).len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gamma/beta have {}/{} entries, rows have {d}",
                    self.val(gi).len(),
                    self.val(bi).len()
                ),
            ));
        }
        let (xd, gd, bd) = (
            self.val(xi).data(),
            self.val(gi).data(),
            self.val(bi).data(),
        );
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * gd[c] + bd[c];
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, d], out),
            Op::LayerNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
            },
        ))
    }

    /// Mean squared error over all elements, as a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pi, ti) = (self.index(pred)?, self.index(target)?);
        let (p, t) = (self.val(pi), self.val(ti));
        if p.shape() != t.shape() {
            return Err(Error::shape(
                "mse",
                format!("pred {:?} vs target {:?}", p.shape(), t.shape()),
            ));
        }
        let value = mse_raw(p.data(), t.data());
        Ok(self.push(
            Tensor::scalar(value),
            Op::Mse {
                pred: pi,
                target: ti,
            },
        ))
    }

    /// Sum of squares of every element of every operand, as a scalar.
    pub fn l2_norm_sq(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<Vec<_>>>()?;
        let total = idx.iter().map(|&i| self.val(i).sum_squares()).sum();
        Ok(self.push(Tensor::scalar(total), Op::SumSquares { parts: idx }))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.index(loss)?;
        if !self.val(li).is_scalar() {
            return Err(Error::NotScalar(self.val(li).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::filled(self.val(li).shape(), 1.0));

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xv = self.val(*x);
                let wv = self.val(*w);
                let (n, d_in) = (xv.shape()[0], xv.shape()[1]);
                let d_out = wv.shape()[0];
                {
                    let gx = slot(grads, *x, xv);
                    for r in 0..n {
                        let grow = &gd[r * d_out..(r + 1) * d_out];
                        let dst = &mut gx[r * d_in..(r + 1) * d_in];
                        for (c, &gc) in grow.iter().enumerate() {
                            if gc != 0.0 {
                                axpy(dst, gc, &wv.data()[c * d_in..(c + 1) * d_in]);
                            }
                        }
                    }
                }
                {
                    let gw = slot(grads, *w, wv);
                    for r in 0..n {
                        let xr = &xv.data()[r * d_in..(r + 1) * d_in];
                        for c in 0..d_out {
                            let gc = gd[r * d_out + c];
                            if gc != 0.0 {
                                axpy(&mut gw[c * d_in..(c + 1) * d_in], gc, xr);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    let gb = slot(grads, *b, self.val(*b));
                    for r in 0..n {
                        axpy(gb, 1.0, &gd[r * d_out..(r + 1) * d_out]);
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (n, k) = (av.shape()[0], av.shape()[1]);
                let m = bv.shape()[1];
                {
                    // ga = g * b^T
                    let ga = slot(grads, *a, av);
                    for r in 0..n {
                        for p in 0..k {
                            let brow = &bv.data()[p * m..(p + 1) * m];
                            let grow = &gd[r * m..(r + 1) * m];
                            ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                {
                    // gb = a^T * g
                    let gb = slot(grads, *b, bv);
                    for r in 0..n {
                        for p in 0..k {
                            let arp = av.data()[r * k + p];
                            if arp != 0.0 {
                                axpy(&mut gb[p * m..(p + 1) * m], arp, &gd[r * m..(r + 1) * m]);
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                axpy(slot(grads, *a, self.val(*a)), 1.0, gd);
                axpy(slot(grads, *b, self.val(*b)), 1.0, gd);
            }
            Op::Sub { a, b } => {
                axpy(slot(grads, *a, self.val(*a)), 1.0, gd);
                axpy(slot(grads, *b, self.val(*b)), -1.0, gd);
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                {
                    let ga = slot(grads, *a, av);
                    for (j, dst) in ga.iter_mut().enumerate() {
                        *dst += gd[j] * bv.data()[j];
                    }
                }
                let gb = slot(grads, *b, bv);
                for (j, dst) in gb.iter_mut().enumerate() {
                    *dst += gd[j] * av.data()[j];
                }
            }
            Op::Scale { a, factor } => {
                axpy(slot(grads, *a, self.val(*a)), *factor, gd);
            }
            Op::Tanh { a } => {
                let y = node.value.data();
                let ga = slot(grads, *a, self.val(*a));
                for j in 0..ga.len() {
                    ga[j] += gd[j] * (1.0 - y[j] * y[j]);
                }
            }
            Op::Sigmoid { a } => {
                let y = node.value.data();
                let ga = slot(grads, *a, self.val(*a));
                for j in 0..ga.len() {
                    ga[j] += gd[j] * y[j] * (1.0 - y[j]);
                }
            }
            Op::Relu { a } => {
                let x = self.val(*a).data();
                let ga = slot(grads, *a, self.val(*a));
                for j in 0..ga.len() {
                    if x[j] > 0.0 {
                        ga[j] += gd[j];
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let pv = self.val(p);
                    let c = pv.shape()[1];
                    let gp = slot(grads, p, pv);
                    for r in 0..rows {
                        axpy(
                            &mut gp[r * c..(r + 1) * c],
                            1.0,
                            &gd[r * total + offset..r * total + offset + c],
                        );
                    }
                    offset += c;
                }
            }
            Op::SliceCols { a, start } => {
                let av = self.val(*a);
                let (rows, cols) = (av.shape()[0], av.shape()[1]);
                let len = node.value.shape()[1];
                let ga = slot(grads, *a, av);
                for r in 0..rows {
                    axpy(
                        &mut ga[r * cols + start..r * cols + start + len],
                        1.0,
                        &gd[r * len..(r + 1) * len],
                    );
                }
            }
            Op::StackRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.val(p);
                    let n = pv.len();
                    axpy(slot(grads, p, pv), 1.0, &gd[offset..offset + n]);
                    offset += n;
                }
            }
            Op::SliceRows { a, start } => {
                let av = self.val(*a);
                let cols = av.shape()[1];
                let n = node.value.len();
                let ga = slot(grads, *a, av);
                axpy(&mut ga[start * cols..start * cols + n], 1.0, gd);
            }
            Op::SumBlocks { a, block } => {
                let av = self.val(*a);
                let (rows, cols) = (av.shape()[0], av.shape()[1]);
                let ga = slot(grads, *a, av);
                for r in 0..rows {
                    let b = r / block;
                    axpy(
                        &mut ga[r * cols..(r + 1) * cols],
                        1.0,
                        &gd[b * cols..(b + 1) * cols],
                    );
                }
            }
            Op::BlockAttention {
                q,
                k,
                v,
                block,
                probs,
            } => self.attention_backward(*q, *k, *v, *block, probs, gd, grads),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.val(*gamma);
                let d = gv.len();
                let rows = inv_std.len();
                {
                    let gg = slot(grads, *gamma, gv);
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] += gd[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                {
                    let gb = slot(grads, *beta, self.val(*beta));
                    for r in 0..rows {
                        axpy(gb, 1.0, &gd[r * d..(r + 1) * d]);
                    }
                }
                let gamma_d = gv.data();
                let gx = slot(grads, *x, self.val(*x));
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let xh = &xhat[r * d..(r + 1) * d];
                    for c in 0..d {
                        dxhat[c] = gd[r * d + c] * gamma_d[c];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        gx[r * d + c] += inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                    }
                }
            }
            Op::Mse { pred, target } => {
                let (pv, tv) = (self.val(*pred), self.val(*target));
                let scale = 2.0 * gd[0] / pv.len() as f64;
                {
                    let gp = slot(grads, *pred, pv);
                    for ((g, p), t) in gp.iter_mut().zip(pv.data()).zip(tv.data()) {
                        *g += scale * (p - t);
                    }
                }
                let gt = slot(grads, *target, tv);
                for ((g, p), t) in gt.iter_mut().zip(pv.data()).zip(tv.data()) {
                    *g -= scale * (p - t);
                }
            }
            Op::SumSquares { parts } => {
                for &p in parts {
                    let pv = self.val(p);
                    let gp = slot(grads, p, pv);
                    axpy(gp, 2.0 * gd[0], pv.data());
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: usize,
        k: usize,
        v: usize,
        block: usize,
        probs: &[f64],
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (qv, kv, vv) = (self.val(q), self.val(k), self.val(v));
        let (rows, d) = (qv.shape()[0], qv.shape()[1]);
        let scale = 1.0 / (d as f64).sqrt();
        let mut gq = vec![0.0; rows * d];
        let mut gk = vec![0.0; rows * d];
        let mut gvv = vec![0.0; rows * d];
        let mut dp = vec![0.0; block];
        for base in (0..rows).step_by(block) {
            for i in 0..block {
                let prow = &probs[(base + i) * block..(base + i + 1) * block];
                let grow = &gd[(base + i) * d..(base + i + 1) * d];
                for j in 0..block {
                    axpy(&mut gvv[(base + j) * d..(base + j + 1) * d], prow[j], grow);
                    let vr = &vv.data()[(base + j) * d..(base + j + 1) * d];
                    dp[j] = grow.iter().zip(vr).map(|(a, b)| a * b).sum();
                }
                let dot: f64 = dp.iter().zip(prow).map(|(a, b)| a * b).sum();
                for j in 0..block {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    axpy(
                        &mut gq[(base + i) * d..(base + i + 1) * d],
                        ds,
                        &kv.data()[(base + j) * d..(base + j + 1) * d],
                    );
                    axpy(
                        &mut gk[(base + j) * d..(base + j + 1) * d],
                        ds,
                        &qv.data()[(base + i) * d..(base + i + 1) * d],
                    );
                }
            }
        }
        axpy(slot(grads, q, qv), 1.0, &gq);
        axpy(slot(grads, k, kv), 1.0, &gk);
        axpy(slot(grads, v, vv), 1.0, &gvv);
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], i: usize, like: &Tensor) -> &'a mut [f64] {
    grads[i]
        .get_or_insert_with(|| Tensor::zeros(like.shape()))
        .data_mut()
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn mse_raw(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.idx as usize >= self.grads.len() {
            return Err(Error::ForeignVar);
        }
        let i = v.idx as usize;
        Ok(match &self.grads[i] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[i]),
        })
    }
}
