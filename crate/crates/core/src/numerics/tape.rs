//! Wengert-list reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass. The
//! tape is not shared between threads; parallel workers build their own.

use std::sync::Arc;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sum(Var),
    CrossEntropy(Var, Arc<[usize]>),
    Column(Var, usize),
    ColumnSlice(Var, usize, usize),
    Reshape(Var),
    TimeStep(Var, usize),
    MeanTime(Var),
    Conv2d(Var, Var, Var),
    Conv1d(Var, Var, Var, usize),
    AvgPool2d(Var, usize, usize),
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

/// Gradient of one scalar head with respect to every upstream node that
/// requires a gradient.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
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

    /// Registers a leaf; participation follows `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn var(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a `[n]` bias along the trailing axis of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let n = *va.shape().last().unwrap_or(&0);
        if vb.shape() != [n] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = va.clone().with_requires_grad(false);
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(vb.data()).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, _) = kernels::softmax_cross_entropy(self.value(logits), labels)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, labels.into()), rg))
    }

    /// Column `j` of a `[m, n]` matrix, as `[m]`.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let va = self.value(a);
        let &[m, n] = va.shape() else {
            return Err(Error::invalid(format!("column of non-matrix {:?}", va.shape())));
        };
        if j >= n {
            return Err(Error::invalid(format!("column {j} out of range for width {n}")));
        }
        let data = (0..m).map(|i| va.data()[i * n + j]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![m], data)?, Op::Column(a, j), rg))
    }

    /// Columns `start..start+len` of a `[m, n]` matrix.
    pub fn column_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let &[m, n] = va.shape() else {
            return Err(Error::invalid(format!("column slice of non-matrix {:?}", va.shape())));
        };
        if start + len > n {
            return Err(Error::invalid(format!("columns {start}..{} out of range for width {n}", start + len)));
        }
        let mut data = Vec::with_capacity(m * len);
        for row in va.data().chunks(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![m, len], data)?, Op::ColumnSlice(a, start, len), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?.with_requires_grad(false);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Slice `[:, t, :]` of a `[N, T, F]` tensor.
    pub fn time_step(&mut self, a: Var, t: usize) -> Result<Var> {
        let va = self.value(a);
        let &[n, steps, f] = va.shape() else {
            return Err(Error::invalid(format!("time_step expects [N, T, F], got {:?}", va.shape())));
        };
        if t >= steps {
            return Err(Error::invalid(format!("time step {t} out of range for {steps}")));
        }
        let mut data = Vec::with_capacity(n * f);
        for s in 0..n {
            let off = (s * steps + t) * f;
            data.extend_from_slice(&va.data()[off..off + f]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![n, f], data)?, Op::TimeStep(a, t), rg))
    }

    /// Mean over the time axis of `[N, T, F]`, giving `[N, F]`.
    pub fn mean_time(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let &[n, steps, f] = va.shape() else {
            return Err(Error::invalid(format!("mean_time expects [N, T, F], got {:?}", va.shape())));
        };
        let inv = 1.0 / steps as f64;
        let mut data = vec![0.0; n * f];
        for s in 0..n {
            for t in 0..steps {
                let off = (s * steps + t) * f;
                data[s * f..(s + 1) * f]
                    .iter_mut()
                    .zip(&va.data()[off..off + f])
                    .for_each(|(d, v)| *d += v * inv);
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![n, f], data)?, Op::MeanTime(a), rg))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(weight), self.value(bias))?;
        let rg = self.rg(&[x, weight, bias]);
        Ok(self.push(out, Op::Conv2d(x, weight, bias), rg))
    }

    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, kernel: usize) -> Result<Var> {
        let out = kernels::conv1d(self.value(x), self.value(weight), self.value(bias), kernel)?;
        let rg = self.rg(&[x, weight, bias]);
        Ok(self.push(out, Op::Conv1d(x, weight, bias, kernel), rg))
    }

    pub fn avgpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let out = kernels::avgpool2d(self.value(x), kernel, stride)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::AvgPool2d(x, kernel, stride), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// The tape itself is left intact so several scalar heads built over one
    /// forward pass (for example one logit column per class) can each be
    /// differentiated without repeating the forward computation.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(shape.to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(delta.data())
                    .for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let shaped = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape().to_vec(), data).expect("grad shape");

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (da, db) = kernels::matmul_backward(val(a), val(b), g);
                acc(a, da);
                acc(b, db);
            }
            &Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            &Op::Sub(a, b) => {
                acc(a, g.clone());
                acc(b, g.map(|x| -x));
            }
            &Op::Mul(a, b) => {
                let da = g.data().iter().zip(val(b).data()).map(|(g, y)| g * y).collect();
                let db = g.data().iter().zip(val(a).data()).map(|(g, x)| g * x).collect();
                acc(a, shaped(a, da));
                acc(b, shaped(b, db));
            }
            &Op::AddBias(a, bias) => {
                let n = val(bias).len();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
                acc(a, g.clone());
                acc(bias, shaped(bias, db));
            }
            &Op::Scale(a, k) => acc(a, g.map(|x| k * x)),
            &Op::Relu(a) => {
                let d = g.data().iter().zip(val(a).data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                acc(a, shaped(a, d));
            }
            &Op::Tanh(a) => {
                let d = g.data().iter().zip(node.value.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                acc(a, shaped(a, d));
            }
            &Op::Sigmoid(a) => {
                let d = g.data().iter().zip(node.value.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                acc(a, shaped(a, d));
            }
            &Op::Sum(a) => {
                let s = g.data()[0];
                acc(a, Tensor::full(val(a).shape().to_vec(), s));
            }
            Op::CrossEntropy(logits, labels) => {
                let (_, dl) = kernels::softmax_cross_entropy(val(*logits), labels).expect("validated in forward");
                let s = g.data()[0];
                acc(*logits, dl.map(|x| x * s));
            }
            &Op::Column(a, j) => {
                let n = val(a).shape()[1];
                let mut d = vec![0.0; val(a).len()];
                for (i, gv) in g.data().iter().enumerate() {
                    d[i * n + j] = *gv;
                }
                acc(a, shaped(a, d));
            }
            &Op::ColumnSlice(a, start, len) => {
                let n = val(a).shape()[1];
                let mut d = vec![0.0; val(a).len()];
                for (row, grow) in d.chunks_mut(n).zip(g.data().chunks(len)) {
                    row[start..start + len].copy_from_slice(grow);
                }
                acc(a, shaped(a, d));
            }
            &Op::Reshape(a) => acc(a, shaped(a, g.data().to_vec())),
            &Op::TimeStep(a, t) => {
                let &[n, steps, f] = val(a).shape() else { unreachable!() };
                let mut d = vec![0.0; val(a).len()];
                for s in 0..n {
                    let off = (s * steps + t) * f;
                    d[off..off + f].copy_from_slice(&g.data()[s * f..(s + 1) * f]);
                }
                acc(a, shaped(a, d));
            }
            &Op::MeanTime(a) => {
                let &[n, steps, f] = val(a).shape() else { unreachable!() };
                let inv = 1.0 / steps as f64;
                let mut d = vec![0.0; val(a).len()];
                for s in 0..n {
                    let gs = &g.data()[s * f..(s + 1) * f];
                    for t in 0..steps {
                        let off = (s * steps + t) * f;
                        d[off..off + f].iter_mut().zip(gs).for_each(|(d, g)| *d = g * inv);
                    }
                }
                acc(a, shaped(a, d));
            }
            &Op::Conv2d(x, w, b) => {
                let (dx, dw, db) = kernels::conv2d_backward(val(x), val(w), val(b), g);
                acc(x, dx);
                acc(w, dw);
                acc(b, db);
            }
            &Op::Conv1d(x, w, b, k) => {
                let (dx, dw, db) = kernels::conv1d_backward(val(x), val(w), val(b), k, g);
                acc(x, dx);
                acc(w, dw);
                acc(b, db);
            }
            &Op::AvgPool2d(x, k, s) => {
                acc(x, kernels::avgpool2d_backward(val(x).shape(), g, k, s));
            }
        }
    }
}
