//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep.

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use super::AutodiffError;
use crate::distributions::special::{logistic, softplus};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Relu(Var),
    Logistic(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    SumLastAxis(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceLast(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Expand(Var),
    Dropout(Var, Vec<f64>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    StickBreak(Var),
    Elementwise(Vec<Var>, Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Batch statistics produced by a training-mode batch normalization node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance estimate.
    pub var: Vec<f64>,
}

pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients from one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn invalid(op: &'static str, message: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument {
        op,
        message: message.into(),
    }
}

impl Graph {
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    /// Leaf for a stored parameter; gradients flow back to it.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = Tensor::matrix(n, m, matmul_raw(ta.data(), tb.data(), n, k, m))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same("div", a, b, |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), out))
    }

    /// Adds a length-m vector to every row of an (·, m) tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.len() != tx.cols() {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut out = tx.clone();
        let b = tb.data().to_vec();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(Op::AddBias(x, bias), out))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(Op::Scale(x, c), out)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(Op::AddScalar(x), out)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), out)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        self.push(Op::Log(x), out)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.push(Op::Softplus(x), out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn logistic(&mut self, x: Var) -> Var {
        let out = self.value(x).map(logistic);
        self.push(Op::Logistic(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), out)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(Op::Softmax(x), out)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(Op::LogSoftmax(x), out)
    }

    /// Sum of all entries, as a length-1 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), out)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sums the last axis away: (r, c) → (r).
    pub fn sum_last_axis(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut shape = t.shape().to_vec();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = Tensor::new(shape, data).expect("row sums match shape");
        self.push(Op::SumLastAxis(x), out)
    }

    /// Concatenation along the last axis; all inputs must agree on the rest.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let rows = self.value(*first).rows();
        let lead = self.value(*first).shape()[..self.value(*first).rank() - 1].to_vec();
        for p in parts {
            let t = self.value(*p);
            if t.shape()[..t.rank() - 1] != lead[..] {
                return Err(mismatch("concat", self.value(*first), t));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    /// Stacks matrices with equal column counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or_else(|| invalid("concat_rows", "no inputs"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    /// Clamps into [lo, hi]; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x);
        let value = t.map(|v| v.clamp(lo, hi));
        let partial = t.data().iter().map(|&v| if v > lo && v < hi { 1.0 } else { 0.0 }).collect();
        self.push(Op::Elementwise(vec![x], vec![partial]), value)
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if start >= end || end > t.cols() {
            return Err(invalid("slice_last", format!("range {start}..{end} outside {:?}", t.shape())));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(Op::SliceLast(x, start), out))
    }

    /// Row gather on a matrix (embedding lookup): out[i] = x[indices[i]].
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(invalid("gather_rows", format!("expected a matrix, got {:?}", t.shape())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(invalid("gather_rows", format!("row {bad} out of range for {:?}", t.shape())));
        }
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(indices.len(), t.cols(), data)?;
        Ok(self.push(Op::GatherRows(x, indices.to_vec()), out))
    }

    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        self.gather_rows(table, indices)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self
            .value(x)
            .reshaped(shape)
            .map_err(|_| invalid("reshape", format!("{:?} → {:?}", self.value(x).shape(), shape)))?;
        Ok(self.push(Op::Reshape(x), out))
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.len() != 1 {
            return Err(invalid("expand", format!("expected one element, got {:?}", t.shape())));
        }
        let out = Tensor::filled(shape, t.item());
        Ok(self.push(Op::Expand(x), out))
    }

    /// Inverted dropout. `uniforms` supplies one U(0,1) draw per element;
    /// in eval mode (`train == false`) the input is returned unchanged.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, uniforms: &[f64]) -> Result<Var, AutodiffError> {
        if !train || rate <= 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        if uniforms.len() != t.len() {
            return Err(invalid("dropout", format!("{} uniforms for {:?}", uniforms.len(), t.shape())));
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = uniforms.iter().map(|&u| if u < keep { 1.0 / keep } else { 0.0 }).collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(Op::Dropout(x, mask), out))
    }

    /// Batch normalization over the rows of an (n, m) matrix.
    ///
    /// In training mode the batch statistics are used and returned so the
    /// caller can update its running averages; in eval mode the supplied
    /// running statistics are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
        train: bool,
    ) -> Result<(Var, Option<BatchStats>), AutodiffError> {
        let t = self.value(x);
        let (n, m) = (t.rows(), t.cols());
        if self.value(gamma).len() != m || self.value(beta).len() != m || running.0.len() != m || running.1.len() != m {
            return Err(mismatch("batch_norm", t, self.value(gamma)));
        }
        let (mean, var_biased, stats) = if train {
            if n < 2 {
                return Err(invalid("batch_norm", "training mode needs at least two rows"));
            }
            let mut mean = vec![0.0; m];
            for r in 0..n {
                for (mu, v) in mean.iter_mut().zip(t.row(r)) {
                    *mu += v / n as f64;
                }
            }
            let mut var = vec![0.0; m];
            for r in 0..n {
                for ((s, v), mu) in var.iter_mut().zip(t.row(r)).zip(&mean) {
                    *s += (v - mu) * (v - mu) / n as f64;
                }
            }
            let unbiased = var.iter().map(|v| v * n as f64 / (n as f64 - 1.0)).collect();
            let stats = BatchStats {
                mean: mean.clone(),
                var: unbiased,
            };
            (mean, var, Some(stats))
        } else {
            (running.0.to_vec(), running.1.to_vec(), None)
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut xhat = Vec::with_capacity(n * m);
        let mut data = Vec::with_capacity(n * m);
        for r in 0..n {
            for (j, v) in t.row(r).iter().enumerate() {
                let h = (v - mean[j]) * inv_std[j];
                xhat.push(h);
                data.push(g[j] * h + b[j]);
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let var = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            out,
        );
        Ok((var, stats))
    }

    /// Stick-breaking over the last axis: K−1 fractions → K weights, the
    /// final weight taking the remainder.
    pub fn stick_break(&mut self, v: Var) -> Var {
        let t = self.value(v);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows * (cols + 1));
        for r in 0..rows {
            let w = crate::distributions::stick_break(t.row(r));
            data.extend(w.pi);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = cols + 1;
        let out = Tensor::new(shape, data).expect("stick shape");
        self.push(Op::StickBreak(v), out)
    }

    /// Elementwise node whose value and local partials are computed by the
    /// caller. Every input must have as many elements as `value`; one partial
    /// vector per input.
    pub fn elementwise(&mut self, inputs: &[Var], value: Tensor, partials: Vec<Vec<f64>>) -> Result<Var, AutodiffError> {
        if inputs.len() != partials.len() {
            return Err(invalid("elementwise", "one partial vector per input is required"));
        }
        for (inp, d) in inputs.iter().zip(&partials) {
            if self.value(*inp).len() != value.len() || d.len() != value.len() {
                return Err(mismatch("elementwise", self.value(*inp), &value));
            }
        }
        Ok(self.push(Op::Elementwise(inputs.to_vec(), partials), value))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.value(loss).len() != 1 {
            return Err(invalid("backward", format!("loss must be a scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            self.propagate(idx, &grad, &mut grads);
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, g: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let unary = |x: Var, f: &dyn Fn(usize) -> f64| {
            let data = grad.data().iter().enumerate().map(|(i, g)| g * f(i)).collect();
            (x, Tensor::new(self.value(x).shape().to_vec(), data).unwrap())
        };
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let da = matmul_nt(grad.data(), tb.data(), n, m, k);
                let db = matmul_tn(ta.data(), grad.data(), n, k, m);
                acc(*a, Tensor::matrix(n, k, da).unwrap());
                acc(*b, Tensor::matrix(k, m, db).unwrap());
            }
            Op::Add(a, b) => {
                acc(*a, grad.clone());
                acc(*b, grad.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, grad.clone());
                acc(*b, grad.map(|g| -g));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                let (x, g) = unary(*a, &|i| tb.data()[i]);
                acc(x, g);
                let (x, g) = unary(*b, &|i| ta.data()[i]);
                acc(x, g);
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                let (x, g) = unary(*a, &|i| 1.0 / tb.data()[i]);
                acc(x, g);
                let (x, g) = unary(*b, &|i| -ta.data()[i] / (tb.data()[i] * tb.data()[i]));
                acc(x, g);
            }
            Op::AddBias(x, bias) => {
                acc(*x, grad.clone());
                let m = grad.cols();
                let mut db = vec![0.0; m];
                for r in 0..grad.rows() {
                    for (d, g) in db.iter_mut().zip(grad.row(r)) {
                        *d += g;
                    }
                }
                acc(*bias, Tensor::new(self.value(*bias).shape().to_vec(), db).unwrap());
            }
            Op::Scale(x, c) => acc(*x, grad.map(|g| g * c)),
            Op::AddScalar(x) => acc(*x, grad.clone()),
            Op::Exp(x) => {
                let (x, g) = unary(*x, &|i| out.data()[i]);
                acc(x, g);
            }
            Op::Log(x) => {
                let tx = self.value(*x);
                let (x, g) = unary(*x, &|i| 1.0 / tx.data()[i]);
                acc(x, g);
            }
            Op::Softplus(x) => {
                let tx = self.value(*x);
                let (x, g) = unary(*x, &|i| logistic(tx.data()[i]));
                acc(x, g);
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let (x, g) = unary(*x, &|i| if tx.data()[i] > 0.0 { 1.0 } else { 0.0 });
                acc(x, g);
            }
            Op::Logistic(x) => {
                let (x, g) = unary(*x, &|i| out.data()[i] * (1.0 - out.data()[i]));
                acc(x, g);
            }
            Op::Tanh(x) => {
                let (x, g) = unary(*x, &|i| 1.0 - out.data()[i] * out.data()[i]);
                acc(x, g);
            }
            Op::Softmax(x) => {
                let mut dx = grad.clone();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let dot: f64 = grad.row(r).iter().zip(y).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in dx.row_mut(r).iter_mut().zip(grad.row(r)).zip(y) {
                        *d = y * (g - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmax(x) => {
                let mut dx = grad.clone();
                for r in 0..out.rows() {
                    let total: f64 = grad.row(r).iter().sum();
                    for (d, lp) in dx.row_mut(r).iter_mut().zip(out.row(r)) {
                        *d -= lp.exp() * total;
                    }
                }
                acc(*x, dx);
            }
            Op::Sum(x) => acc(*x, Tensor::filled(self.value(*x).shape(), grad.item())),
            Op::SumLastAxis(x) => {
                let tx = self.value(*x);
                let mut dx = Tensor::zeros(tx.shape());
                for r in 0..tx.rows() {
                    let g = grad.data()[r];
                    dx.row_mut(r).iter_mut().for_each(|d| *d = g);
                }
                acc(*x, dx);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let tp = self.value(*p);
                    let c = tp.cols();
                    let mut dp = Tensor::zeros(tp.shape());
                    for r in 0..tp.rows() {
                        dp.row_mut(r).copy_from_slice(&grad.row(r)[offset..offset + c]);
                    }
                    offset += c;
                    acc(*p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    let dp = Tensor::new(self.value(*p).shape().to_vec(), grad.data()[offset..offset + n].to_vec()).unwrap();
                    offset += n;
                    acc(*p, dp);
                }
            }
            Op::SliceLast(x, start) => {
                let tx = self.value(*x);
                let mut dx = Tensor::zeros(tx.shape());
                let w = grad.cols();
                for r in 0..tx.rows() {
                    dx.row_mut(r)[*start..*start + w].copy_from_slice(grad.row(r));
                }
                acc(*x, dx);
            }
            Op::GatherRows(x, indices) => {
                let tx = self.value(*x);
                let mut dx = Tensor::zeros(tx.shape());
                for (i, &src) in indices.iter().enumerate() {
                    for (d, g) in dx.row_mut(src).iter_mut().zip(grad.row(i)) {
                        *d += g;
                    }
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, grad.reshaped(self.value(*x).shape()).unwrap()),
            Op::Expand(x) => acc(*x, Tensor::new(self.value(*x).shape().to_vec(), vec![grad.sum()]).unwrap()),
            Op::Dropout(x, mask) => {
                let (x, g) = unary(*x, &|i| mask[i]);
                acc(x, g);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, m) = (grad.rows(), grad.cols());
                let gvals = self.value(*gamma).data().to_vec();
                let mut dgamma = vec![0.0; m];
                let mut dbeta = vec![0.0; m];
                for r in 0..n {
                    for j in 0..m {
                        let g = grad.data()[r * m + j];
                        dgamma[j] += g * xhat[r * m + j];
                        dbeta[j] += g;
                    }
                }
                let mut dx = vec![0.0; n * m];
                if *train {
                    let nf = n as f64;
                    for j in 0..m {
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for r in 0..n {
                            let dxh = grad.data()[r * m + j] * gvals[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat[r * m + j];
                        }
                        for r in 0..n {
                            let dxh = grad.data()[r * m + j] * gvals[j];
                            dx[r * m + j] = inv_std[j] / nf * (nf * dxh - sum_dxhat - xhat[r * m + j] * sum_dxhat_xhat);
                        }
                    }
                } else {
                    for r in 0..n {
                        for j in 0..m {
                            dx[r * m + j] = grad.data()[r * m + j] * gvals[j] * inv_std[j];
                        }
                    }
                }
                acc(*x, Tensor::new(grad.shape().to_vec(), dx).unwrap());
                acc(*gamma, Tensor::new(self.value(*gamma).shape().to_vec(), dgamma).unwrap());
                acc(*beta, Tensor::new(self.value(*beta).shape().to_vec(), dbeta).unwrap());
            }
            Op::StickBreak(v) => {
                let tv = self.value(*v);
                let cols = tv.cols();
                let mut dv = Tensor::zeros(tv.shape());
                for r in 0..tv.rows() {
                    let frac = tv.row(r);
                    let pi = out.row(r);
                    let g = grad.row(r);
                    // suffix[j] = Σ_{k>j} g_k π_k
                    let mut suffix = g[cols] * pi[cols];
                    let mut remaining: Vec<f64> = Vec::with_capacity(cols);
                    let mut rem = 1.0;
                    for &f in frac {
                        remaining.push(rem);
                        rem *= 1.0 - f;
                    }
                    let row = dv.row_mut(r);
                    for j in (0..cols).rev() {
                        row[j] = g[j] * remaining[j] - suffix / (1.0 - frac[j]);
                        suffix += g[j] * pi[j];
                    }
                }
                acc(*v, dv);
            }
            Op::Elementwise(inputs, partials) => {
                for (inp, d) in inputs.iter().zip(partials) {
                    let (x, g) = unary(*inp, &|i| d[i]);
                    acc(x, g);
                }
            }
        }
    }

    /// Collects gradients of parameter leaves, summing repeated uses.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[i].as_ref()) {
                match out.iter_mut().find(|(pid, _)| pid == id) {
                    Some((_, existing)) => existing.add_assign(g),
                    None => out.push((*id, g.clone())),
                }
            }
        }
        out
    }
}
