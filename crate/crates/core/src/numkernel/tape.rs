//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and
//! accumulates gradients into every leaf created with [`Tape::param`].
//! A fresh tape is built for each forward pass.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc};
use super::{KernelError, Tensor};

type Result<T> = std::result::Result<T, KernelError>;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    Gelu(usize),
    Exp(usize),
    Log(usize),
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    MaskedSoftmax(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Concat { inputs: Vec<usize>, widths: Vec<usize> },
    SliceLast { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    Sum(usize),
    Mean(usize),
    Pick { x: usize, index: usize },
    Embedding { table: usize, ids: Vec<usize> },
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> KernelError {
    KernelError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(KernelError::NumericDomain(op))
    }
}

fn softmax_forward(t: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, len, inner) = axis_split(t.shape(), axis);
    let x = t.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                sum += e;
            }
            if log {
                let lse = sum.ln();
                for j in 0..len {
                    out[at(j)] = x[at(j)] - max - lse;
                }
            } else {
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

/// Numerically stable softmax of a plain tensor along `axis`.
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= t.shape().len().max(1) || t.shape().is_empty() {
        return Err(KernelError::Contract(format!(
            "softmax axis {axis} invalid for shape {:?}",
            t.shape()
        )));
    }
    check_finite("softmax", t)?;
    Ok(softmax_forward(t, axis, false))
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Differentiable leaf; [`Tape::grad`] returns its accumulated gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Accumulated gradient of a `param` leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.nodes.borrow()[v.id].grad.clone()
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Propagates d(loss)/d(leaf) into every `param` leaf. Gradients add to
    /// whatever earlier calls left behind.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let leaf_grads = {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if root.value.numel() != 1 {
                return Err(KernelError::Contract(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    root.value.shape()
                )));
            }
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
            grads[loss.id] = Some(vec![1.0]);
            let mut leaf_grads = Vec::new();
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Op::Leaf = node.op {
                    leaf_grads.push((id, g));
                    continue;
                }
                propagate(&nodes, node, &g, &mut grads);
            }
            leaf_grads
        };
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(&g) {
                        *e += v;
                    }
                }
                None => node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contribution: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: usize| nodes[id].value.data();
    let y = node.value.data();
    let needs = |id: usize| nodes[id].requires_grad;
    let elementwise = |grads: &mut [Option<Vec<f64>>], x: usize, f: &dyn Fn(usize) -> f64| {
        if needs(x) {
            let c = (0..g.len()).map(|i| g[i] * f(i)).collect();
            accumulate(grads, nodes, x, c);
        }
    };
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            elementwise(grads, *a, &|i| bv[i]);
            elementwise(grads, *b, &|i| av[i]);
        }
        Op::AddBias(a, bias) => {
            accumulate(grads, nodes, *a, g.to_vec());
            if needs(*bias) {
                let n = nodes[*bias].value.numel();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, nodes, *bias, gb);
            }
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.iter().map(|v| v * c).collect()),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::MatMul(a, b) => {
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            if needs(*a) {
                let mut ga = vec![0.0; m * k];
                gemm_bt_acc(g, tb.data(), &mut ga, m, n, k);
                accumulate(grads, nodes, *a, ga);
            }
            if needs(*b) {
                let mut gb = vec![0.0; k * n];
                gemm_at_acc(ta.data(), g, &mut gb, m, k, n);
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::MatMulBt(a, b) => {
            // y[m,n] = a[m,k] b[n,k]^T
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
            if needs(*a) {
                let mut ga = vec![0.0; m * k];
                gemm_acc(g, tb.data(), &mut ga, m, n, k);
                accumulate(grads, nodes, *a, ga);
            }
            if needs(*b) {
                let mut gb = vec![0.0; n * k];
                gemm_at_acc(g, ta.data(), &mut gb, m, n, k);
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Transpose(a) => {
            let s = node.value.shape();
            let (r, c) = (s[0], s[1]);
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    ga[j * r + i] = g[i * c + j];
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sigmoid(a) => elementwise(grads, *a, &|i| y[i] * (1.0 - y[i])),
        Op::Tanh(a) => elementwise(grads, *a, &|i| 1.0 - y[i] * y[i]),
        Op::Gelu(a) => {
            let x = val(*a);
            elementwise(grads, *a, &|i| gelu_grad(x[i]));
        }
        Op::Exp(a) => elementwise(grads, *a, &|i| y[i]),
        Op::Log(a) => {
            let x = val(*a);
            elementwise(grads, *a, &|i| 1.0 / x[i]);
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = axis_split(node.value.shape(), *axis);
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..len {
                        gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::LogSoftmax { x, axis } => {
            let (outer, len, inner) = axis_split(node.value.shape(), *axis);
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let total: f64 = (0..len).map(|j| g[at(j)]).sum();
                    for j in 0..len {
                        gx[at(j)] = g[at(j)] - y[at(j)].exp() * total;
                    }
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::MaskedSoftmax(x) => {
            let n = node.value.last_dim();
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    out[j] = yr[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let gam = val(*gamma);
            let n = gam.len();
            if needs(*gamma) {
                let mut gg = vec![0.0; n];
                for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        gg[j] += gr[j] * xr[j];
                    }
                }
                accumulate(grads, nodes, *gamma, gg);
            }
            if needs(*beta) {
                let mut gb = vec![0.0; n];
                for gr in g.chunks(n) {
                    for j in 0..n {
                        gb[j] += gr[j];
                    }
                }
                accumulate(grads, nodes, *beta, gb);
            }
            if needs(*x) {
                let mut gx = vec![0.0; g.len()];
                let nf = n as f64;
                for (r, (gr, xr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..n {
                        let d = gr[j] * gam[j];
                        sum_d += d;
                        sum_dx += d * xr[j];
                    }
                    let out = &mut gx[r * n..(r + 1) * n];
                    for j in 0..n {
                        let d = gr[j] * gam[j];
                        out[j] = rstd[r] / nf * (nf * d - sum_d - xr[j] * sum_dx);
                    }
                }
                accumulate(grads, nodes, *x, gx);
            }
        }
        Op::Concat { inputs, widths } => {
            let total: usize = widths.iter().sum();
            let rows = g.len() / total.max(1);
            let mut offset = 0;
            for (&inp, &w) in inputs.iter().zip(widths) {
                if needs(inp) {
                    let mut gi = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gi.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, nodes, inp, gi);
                }
                offset += w;
            }
        }
        Op::SliceLast { x, start } => {
            let src = &nodes[*x].value;
            let (full, w) = (src.last_dim(), node.value.last_dim());
            let mut gx = vec![0.0; src.numel()];
            for (r, gr) in g.chunks(w).enumerate() {
                gx[r * full + start..r * full + start + w].copy_from_slice(gr);
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::SliceRows { x, start } => {
            let src = &nodes[*x].value;
            let c = src.last_dim();
            let mut gx = vec![0.0; src.numel()];
            gx[start * c..start * c + g.len()].copy_from_slice(g);
            accumulate(grads, nodes, *x, gx);
        }
        Op::Sum(a) => {
            let n = nodes[*a].value.numel();
            accumulate(grads, nodes, *a, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = nodes[*a].value.numel();
            accumulate(grads, nodes, *a, vec![g[0] / n as f64; n]);
        }
        Op::Pick { x, index } => {
            let mut gx = vec![0.0; nodes[*x].value.numel()];
            gx[*index] = g[0];
            accumulate(grads, nodes, *x, gx);
        }
        Op::Embedding { table, ids } => {
            let t = &nodes[*table].value;
            let h = t.last_dim();
            let mut gt = vec![0.0; t.numel()];
            for (r, &id) in ids.iter().enumerate() {
                for j in 0..h {
                    gt[id * h + j] += g[r * h + j];
                }
            }
            accumulate(grads, nodes, *table, gt);
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, g.to_vec()),
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value; errors unless the tensor has exactly one element.
    pub fn item(&self) -> Result<f64> {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(&self, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary_same_shape(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(name, &a, &b));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self
            .tape
            .push(Tensor::from_parts(a.shape().to_vec(), data), op, rg))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    /// Adds a 1-D `bias` to every row (broadcast over the last axis).
    pub fn add_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), bias.value());
        if b.shape().len() != 1 || a.last_dim() != b.numel() || a.shape().is_empty() {
            return Err(shape_err("add_bias", &a, &b));
        }
        let n = b.numel();
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        let rg = self.tape.requires(&[self.id, bias.id]);
        Ok(self.tape.push(
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::AddBias(self.id, bias.id),
            rg,
        ))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.unary(Op::AddScalar(self.id), v)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", &a, &b));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(a.data(), b.data(), &mut out, m, k, n);
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(self.id, other.id),
            rg,
        ))
    }

    /// `[m,k] x [n,k]^T -> [m,n]` without materializing the transpose.
    pub fn matmul_bt(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
            return Err(shape_err("matmul_bt", &a, &b));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
        let mut out = vec![0.0; m * n];
        gemm_bt_acc(a.data(), b.data(), &mut out, m, k, n);
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMulBt(self.id, other.id),
            rg,
        ))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(KernelError::Contract(format!(
                "transpose needs a matrix, got {:?}",
                a.shape()
            )));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data()[i * c + j];
            }
        }
        Ok(self.unary(Op::Transpose(self.id), Tensor::from_parts(vec![c, r], out)))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.unary(Op::Sigmoid(self.id), v)
    }

    pub fn tanh(&self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.unary(Op::Tanh(self.id), v)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&self) -> Var<'t> {
        let v = self.value().map(gelu);
        self.unary(Op::Gelu(self.id), v)
    }

    pub fn exp(&self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let a = self.value();
        if a.data().iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(KernelError::NumericDomain("log"));
        }
        Ok(self.unary(Op::Log(self.id), a.map(f64::ln)))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let v = softmax(&self.value(), axis)?;
        Ok(self.unary(Op::Softmax { x: self.id, axis }, v))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().is_empty() || axis >= a.shape().len() {
            return Err(KernelError::Contract(format!(
                "log_softmax axis {axis} invalid for shape {:?}",
                a.shape()
            )));
        }
        check_finite("log_softmax", &a)?;
        let v = softmax_forward(&a, axis, true);
        Ok(self.unary(Op::LogSoftmax { x: self.id, axis }, v))
    }

    /// Row-wise softmax over the last axis restricted to columns where
    /// `keep` is true; excluded columns get probability exactly zero.
    pub fn masked_softmax(&self, keep: Rc<[bool]>) -> Result<Var<'t>> {
        let a = self.value();
        let n = a.last_dim();
        if keep.len() != n || a.shape().is_empty() {
            return Err(KernelError::Contract(format!(
                "mask of length {} for rows of width {n}",
                keep.len()
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(KernelError::Contract("mask excludes every position".into()));
        }
        check_finite("masked_softmax", &a)?;
        let mut out = vec![0.0; a.numel()];
        for (xr, yr) in a.data().chunks(n).zip(out.chunks_mut(n)) {
            let max = xr
                .iter()
                .zip(keep.iter())
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                if keep[j] {
                    let e = (xr[j] - max).exp();
                    yr[j] = e;
                    sum += e;
                }
            }
            for v in yr.iter_mut() {
                *v /= sum;
            }
        }
        let v = Tensor::from_parts(a.shape().to_vec(), out);
        Ok(self.unary(Op::MaskedSoftmax(self.id), v))
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
        let (a, g, b) = (self.value(), gamma.value(), beta.value());
        let n = a.last_dim();
        if g.shape() != [n] || b.shape() != [n] || a.shape().is_empty() {
            return Err(shape_err("layer_norm", &a, &g));
        }
        let rows = a.rows();
        let mut xhat = vec![0.0; a.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; a.numel()];
        for r in 0..rows {
            let xr = &a.data()[r * n..(r + 1) * n];
            let mean = xr.iter().sum::<f64>() / n as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for j in 0..n {
                let h = (xr[j] - mean) * s;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let rg = self.tape.requires(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(
            Tensor::from_parts(a.shape().to_vec(), out),
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| KernelError::Contract("concat of zero tensors".into()))?;
        let tape = first.tape;
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let lead = &values[0].shape()[..values[0].shape().len().saturating_sub(1)];
        for v in &values[1..] {
            if v.shape().is_empty() || &v.shape()[..v.shape().len() - 1] != lead {
                return Err(shape_err("concat", &values[0], v));
            }
        }
        let widths: Vec<usize> = values.iter().map(|v| v.last_dim()).collect();
        let total: usize = widths.iter().sum();
        let rows = values[0].rows();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                out.extend_from_slice(v.row_slice(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.requires(&ids);
        Ok(tape.push(
            Tensor::from_parts(shape, out),
            Op::Concat { inputs: ids, widths },
            rg,
        ))
    }

    /// Columns `[start, start + len)` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        let full = a.last_dim();
        if start + len > full || a.shape().is_empty() {
            return Err(KernelError::Contract(format!(
                "slice [{start}, {}) outside width {full}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(a.rows() * len);
        for r in 0..a.rows() {
            out.extend_from_slice(&a.row_slice(r)[start..start + len]);
        }
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.unary(
            Op::SliceLast { x: self.id, start },
            Tensor::from_parts(shape, out),
        ))
    }

    /// Rows `[start, start + len)` of a matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 || start + len > a.shape()[0] {
            return Err(KernelError::Contract(format!(
                "row slice [{start}, {}) of {:?}",
                start + len,
                a.shape()
            )));
        }
        let c = a.shape()[1];
        let out = a.data()[start * c..(start + len) * c].to_vec();
        Ok(self.unary(
            Op::SliceRows { x: self.id, start },
            Tensor::from_parts(vec![len, c], out),
        ))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.unary(Op::Sum(self.id), Tensor::scalar(s))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let a = self.value();
        if a.numel() == 0 {
            return Err(KernelError::Contract("mean of empty tensor".into()));
        }
        let m = a.data().iter().sum::<f64>() / a.numel() as f64;
        Ok(self.unary(Op::Mean(self.id), Tensor::scalar(m)))
    }

    /// Element at flat row-major `index`, as a scalar.
    pub fn pick(&self, index: usize) -> Result<Var<'t>> {
        let a = self.value();
        let v = *a.data().get(index).ok_or_else(|| {
            KernelError::Contract(format!("index {index} out of {} elements", a.numel()))
        })?;
        Ok(self.unary(Op::Pick { x: self.id, index }, Tensor::scalar(v)))
    }

    /// Gathers rows of a `[vocab, h]` table: result is `[ids.len(), h]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Var<'t>> {
        let t = self.value();
        if t.shape().len() != 2 {
            return Err(KernelError::Contract("embedding table must be a matrix".into()));
        }
        let (v, h) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= v {
                return Err(KernelError::Contract(format!(
                    "embedding id {id} outside table of {v} rows"
                )));
            }
            out.extend_from_slice(t.row_slice(id));
        }
        Ok(self.unary(
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
            Tensor::from_parts(vec![ids.len(), h], out),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(Op::Reshape(self.id), v))
    }
}
