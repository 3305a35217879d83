//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]; nodes are
//! therefore stored in topological order and [`Tape::backward`] walks them
//! in reverse. Leaves created from tensors with `requires_grad == false`
//! are constants: no gradient is accumulated for them or for any node that
//! depends only on constants.

use std::cell::{Cell, Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};

/// Floor applied inside [`Var::log`].
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    MulScalar(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    MeanRows(usize),
    Sum(usize),
    Square(usize),
    Sqrt(usize),
    Exp(usize),
    Log(usize),
    SoftmaxRows(usize),
    Cosine(usize, usize),
    L2Normalize(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize },
    Element(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    leaves: Vec<bool>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`, or `None` when `var` is a constant
    /// or does not influence the loss.
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        let g = self.grads.get(var.id)?.as_ref()?;
        Tensor::new(&self.shapes[var.id], g.clone()).ok()
    }

    /// Gradient with respect to a leaf created by [`Tape::param`].
    pub fn leaf(&self, var: Var<'_>) -> Option<&[f64]> {
        if !self.leaves[var.id] {
            return None;
        }
        self.grads[var.id].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        self.consumed.set(false);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad`.
    pub fn param(&self, tensor: &Tensor) -> Var<'_> {
        let mut value = tensor.clone();
        value.grad = None;
        let needs_grad = value.requires_grad;
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Records a constant leaf.
    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        let mut value = tensor;
        value.requires_grad = false;
        value.grad = None;
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Back-propagates from a scalar `loss`. A tape may be differentiated
    /// once; call [`Tape::reset`] before recording a new pass.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        if self.consumed.get() {
            return Err(Error::Contract(
                "backward already called on this tape; reset it first".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].needs_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            leaves: nodes
                .iter()
                .map(|n| matches!(n.op, Op::Leaf) && n.needs_grad)
                .collect(),
        })
    }
}

fn accumulate<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if let Some(da) = accumulate(grads, nodes, *a) {
                matmul_bt_acc(g, bv.data(), da, m, k, n);
            }
            if let Some(db) = accumulate(grads, nodes, *b) {
                matmul_at_acc(av.data(), g, db, m, k, n);
            }
        }
        Op::Add(a, b) => {
            for (id, sign) in [(*a, 1.0), (*b, 1.0)] {
                if let Some(d) = accumulate(grads, nodes, id) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                }
            }
        }
        Op::Sub(a, b) => {
            for (id, sign) in [(*a, 1.0), (*b, -1.0)] {
                if let Some(d) = accumulate(grads, nodes, id) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                }
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[*a].value.data().to_vec();
            let bv = nodes[*b].value.data().to_vec();
            if let Some(da) = accumulate(grads, nodes, *a) {
                for i in 0..g.len() {
                    da[i] += g[i] * bv[i];
                }
            }
            if let Some(db) = accumulate(grads, nodes, *b) {
                for i in 0..g.len() {
                    db[i] += g[i] * av[i];
                }
            }
        }
        Op::AddBias(x, bias) => {
            if let Some(dx) = accumulate(grads, nodes, *x) {
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            let n = nodes[*bias].value.len();
            if let Some(db) = accumulate(grads, nodes, *bias) {
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::MulScalar(x, c) => {
            if let Some(dx) = accumulate(grads, nodes, *x) {
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
            }
        }
        Op::AddScalar(x) => {
            if let Some(dx) = accumulate(grads, nodes, *x) {
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
        }
        Op::Relu(x) => {
            let xv = nodes[*x].value.data().to_vec();
            if let Some(dx) = accumulate(grads, nodes, *x) {
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        dx[i] += g[i];
                    }
                }
            }
        }
        Op::Transpose(x) => {
            let (m, n) = (nodes[*x].value.shape()[0], nodes[*x].value.shape()[1]);
            if let Some(dx) = accumulate(grads, nodes, *x) {
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total: usize = node.value.shape()[1];
            let mut offset = 0;
            for &p in parts {
                let (m, w) = (nodes[p].value.shape()[0], nodes[p].value.shape()[1]);
                if let Some(dp) = accumulate(grads, nodes, p) {
                    for i in 0..m {
                        for j in 0..w {
                            dp[i * w + j] += g[i * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::MeanRows(x) => {
            let (m, n) = (nodes[*x].value.shape()[0], nodes[*x].value.shape()[1]);
            if let Some(dx) = accumulate(grads, nodes, *x) {
                let scale = 1.0 / m as f64;
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] += g[j] * scale;
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = accumulate(grads, nodes, *x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Square(x) => {
            let xv = nodes[*x].value.data().to_vec();
            if let Some(dx) = accumulate(grads, nodes, *x) {
                for i in 0..g.len() {
                    dx[i] += 2.0 * xv[i] * g[i];
                }
            }
        }
        Op::Sqrt(x) => {
            if let Some(dx) = accumulate(grads, nodes, *x) {
                for i in 0..g.len() {
                    dx[i] += g[i] / (2.0 * out[i]);
                }
            }
        }
        Op::Exp(x) => {
            if let Some(dx) = accumulate(grads, nodes, *x) {
                for i in 0..g.len() {
                    dx[i] += g[i] * out[i];
                }
            }
        }
        Op::Log(x) => {
            let xv = nodes[*x].value.data().to_vec();
            if let Some(dx) = accumulate(grads, nodes, *x) {
                for i in 0..g.len() {
                    if xv[i] > LOG_EPS {
                        dx[i] += g[i] / xv[i];
                    }
                }
            }
        }
        Op::SoftmaxRows(x) => {
            let n = node.value.shape()[1];
            if let Some(dx) = accumulate(grads, nodes, *x) {
                for ((y, gy), d) in out.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[j] += y[j] * (gy[j] - dot);
                    }
                }
            }
        }
        Op::Cosine(a, b) => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            let na = norm(av);
            let nb = norm(bv);
            let c = out[0];
            let da_v: Vec<f64> = av
                .iter()
                .zip(bv)
                .map(|(x, y)| g[0] * (y / (na * nb) - c * x / (na * na)))
                .collect();
            let db_v: Vec<f64> = av
                .iter()
                .zip(bv)
                .map(|(x, y)| g[0] * (x / (na * nb) - c * y / (nb * nb)))
                .collect();
            if let Some(da) = accumulate(grads, nodes, *a) {
                da.iter_mut().zip(&da_v).for_each(|(d, v)| *d += v);
            }
            if let Some(db) = accumulate(grads, nodes, *b) {
                db.iter_mut().zip(&db_v).for_each(|(d, v)| *d += v);
            }
        }
        Op::L2Normalize(x) => {
            let nx = norm(nodes[*x].value.data());
            let dot: f64 = out.iter().zip(g).map(|(y, g)| y * g).sum();
            if let Some(dx) = accumulate(grads, nodes, *x) {
                for i in 0..g.len() {
                    dx[i] += (g[i] - out[i] * dot) / nx;
                }
            }
        }
        Op::LayerNorm { x, gamma, beta } => {
            let xv = &nodes[*x].value;
            let n = xv.shape()[1];
            let gam = nodes[*gamma].value.data().to_vec();
            let mut dgamma = vec![0.0; n];
            let mut dbeta = vec![0.0; n];
            let mut dxv = vec![0.0; xv.len()];
            for (r, (xr, gr)) in xv.data().chunks(n).zip(g.chunks(n)).enumerate() {
                let (mean, inv_std) = row_moments(xr);
                let xhat: Vec<f64> = xr.iter().map(|v| (v - mean) * inv_std).collect();
                let dxhat: Vec<f64> = gr.iter().zip(&gam).map(|(g, s)| g * s).collect();
                let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for j in 0..n {
                    dgamma[j] += gr[j] * xhat[j];
                    dbeta[j] += gr[j];
                    dxv[r * n + j] = inv_std * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                }
            }
            for (id, v) in [(*x, dxv), (*gamma, dgamma), (*beta, dbeta)] {
                if let Some(d) = accumulate(grads, nodes, id) {
                    d.iter_mut().zip(&v).for_each(|(d, v)| *d += v);
                }
            }
        }
        Op::Element(x, idx) => {
            if let Some(dx) = accumulate(grads, nodes, *x) {
                dx[*idx] += g[0];
            }
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Variance epsilon used by [`Var::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape(), data).expect("same shape")
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrowed view of the forward value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }

    fn unary(&self, op: Op, value: Tensor) -> Var<'t> {
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(value, op, needs)
    }

    fn binary(&self, other: &Var<'t>, op: Op, value: Tensor) -> Var<'t> {
        let needs = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, op, needs)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let a = self.value();
            let b = other.value();
            let (m, k) = a.dims2()?;
            let (k2, n) = b.dims2()?;
            if k != k2 {
                return Err(Error::dim("matmul", a.shape(), b.shape()));
            }
            let mut out = vec![0.0; m * n];
            matmul_acc(a.data(), b.data(), &mut out, m, k, n);
            Tensor::new(&[m, n], out)?
        };
        Ok(self.binary(other, Op::MatMul(self.id, other.id), value))
    }

    fn zip_same(&self, other: &Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(Error::dim(op, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape(), data)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let value = self.zip_same(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, Op::Add(self.id, other.id), value))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let value = self.zip_same(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, Op::Sub(self.id, other.id), value))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let value = self.zip_same(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, Op::Mul(self.id, other.id), value))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_bias(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias)?;
        let value = {
            let x = self.value();
            let b = bias.value();
            let (_, n) = x.dims2()?;
            if b.len() != n {
                return Err(Error::dim("add_bias", x.shape(), b.shape()));
            }
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(n) {
                row.iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
            }
            Tensor::new(x.shape(), data)?
        };
        Ok(self.binary(bias, Op::AddBias(self.id, bias.id), value))
    }

    pub fn mul_scalar(&self, c: f64) -> Var<'t> {
        let value = map(&self.value(), |v| v * c);
        self.unary(Op::MulScalar(self.id, c), value)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let value = map(&self.value(), |v| v + c);
        self.unary(Op::AddScalar(self.id), value)
    }

    pub fn relu(&self) -> Var<'t> {
        let value = map(&self.value(), |v| v.max(0.0));
        self.unary(Op::Relu(self.id), value)
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let (m, n) = x.dims2()?;
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    data[j * m + i] = x.data()[i * n + j];
                }
            }
            Tensor::new(&[n, m], data)?
        };
        Ok(self.unary(Op::Transpose(self.id), value))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of zero tensors".into()))?;
        let tape = first.tape;
        let value = {
            let (m, _) = first.value().dims2()?;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                first.same_tape(p)?;
                let (pm, pn) = p.value().dims2()?;
                if pm != m {
                    return Err(Error::dim("concat_cols", &first.shape(), &p.shape()));
                }
                widths.push(pn);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(m * total);
            for i in 0..m {
                for p in parts {
                    data.extend_from_slice(p.value().row(i));
                }
            }
            Tensor::new(&[m, total], data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = tape.needs(&ids);
        Ok(tape.push(value, Op::ConcatCols(ids), needs))
    }

    /// Column means of an `m×n` matrix, shaped `1×n`.
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let (m, n) = x.dims2()?;
            if m == 0 {
                return Err(Error::DegenerateInput("mean over zero rows".into()));
            }
            let mut data = vec![0.0; n];
            for row in x.data().chunks(n) {
                data.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            data.iter_mut().for_each(|d| *d /= m as f64);
            Tensor::new(&[1, n], data)?
        };
        Ok(self.unary(Op::MeanRows(self.id), value))
    }

    pub fn sum(&self) -> Var<'t> {
        let value = Tensor::scalar(self.value().data().iter().sum());
        self.unary(Op::Sum(self.id), value)
    }

    pub fn square(&self) -> Var<'t> {
        let value = map(&self.value(), |v| v * v);
        self.unary(Op::Square(self.id), value)
    }

    pub fn sqrt(&self) -> Var<'t> {
        let value = map(&self.value(), f64::sqrt);
        self.unary(Op::Sqrt(self.id), value)
    }

    pub fn exp(&self) -> Var<'t> {
        let value = map(&self.value(), f64::exp);
        self.unary(Op::Exp(self.id), value)
    }

    /// Natural log with inputs floored at [`LOG_EPS`].
    pub fn log(&self) -> Var<'t> {
        let value = map(&self.value(), |v| v.max(LOG_EPS).ln());
        self.unary(Op::Log(self.id), value)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let (_, n) = x.dims2()?;
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(n) {
                softmax_in_place(row);
            }
            Tensor::new(x.shape(), data)?
        };
        Ok(self.unary(Op::SoftmaxRows(self.id), value))
    }

    /// Cosine similarity of two equal-length tensors, treated as flat vectors.
    pub fn cosine_similarity(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let a = self.value();
            let b = other.value();
            if a.len() != b.len() {
                return Err(Error::dim("cosine_similarity", a.shape(), b.shape()));
            }
            let (na, nb) = (norm(a.data()), norm(b.data()));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::DegenerateInput(
                    "cosine similarity of a zero-norm vector".into(),
                ));
            }
            let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
            Tensor::scalar(dot / (na * nb))
        };
        Ok(self.binary(other, Op::Cosine(self.id, other.id), value))
    }

    /// Scales the whole tensor to unit Euclidean norm.
    pub fn l2_normalize(&self) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let n = norm(x.data());
            if n == 0.0 {
                return Err(Error::DegenerateInput("normalizing a zero-norm vector".into()));
            }
            map(&x, |v| v / n)
        };
        Ok(self.unary(Op::L2Normalize(self.id), value))
    }

    /// Per-row layer normalization with learned scale and shift.
    pub fn layer_norm(&self, gamma: &Var<'t>, beta: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let value = {
            let x = self.value();
            let (_, n) = x.dims2()?;
            let (gv, bv) = (gamma.value(), beta.value());
            if gv.len() != n || bv.len() != n {
                return Err(Error::dim("layer_norm", x.shape(), gv.shape()));
            }
            let mut data = Vec::with_capacity(x.len());
            for row in x.data().chunks(n) {
                let (mean, inv_std) = row_moments(row);
                for j in 0..n {
                    data.push((row[j] - mean) * inv_std * gv.data()[j] + bv.data()[j]);
                }
            }
            Tensor::new(x.shape(), data)?
        };
        let needs = self.tape.needs(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
            },
            needs,
        ))
    }

    /// Selects one element (flat row-major index) as a scalar.
    pub fn element(&self, index: usize) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let v = *x
                .data()
                .get(index)
                .ok_or_else(|| Error::dim("element", x.shape(), &[index]))?;
            Tensor::scalar(v)
        };
        Ok(self.unary(Op::Element(self.id, index), value))
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
