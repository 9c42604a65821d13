//! Layers built on the tape: dense, batch normalization, MLP and LSTM.
//!
//! Layers only hold parameter ids; the values live in a [`ParamStore`] so one
//! store can be checkpointed and optimized as a unit.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AutodiffError, BatchStats, Graph, ParamId, ParamStore, Tensor, Var};

/// Glorot-normal matrix: N(0, 2/(fan_in + fan_out)).
pub fn glorot_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("sized buffer")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Softplus => g.softplus(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// y = x·W + b with W stored as (in, out).
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let weight = store.add(format!("{name}.weight"), glorot_normal(input, output, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]))?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_bias(xw, b)
    }
}

/// Batch normalization with learned scale/shift and running statistics.
///
/// Running statistics are kept in the store as non-trainable tensors.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self, AutodiffError> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(&[dim], 1.0))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?;
        let running_mean = store.add(format!("{name}.running_mean"), Tensor::zeros(&[dim]))?;
        let running_var = store.add(format!("{name}.running_var"), Tensor::filled(&[dim], 1.0))?;
        store.get_mut(running_mean).requires_grad = false;
        store.get_mut(running_var).requires_grad = false;
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum: 0.9,
        })
    }

    /// Returns the output and, in training mode, the batch statistics to be
    /// folded into the running averages with [`BatchNorm1d::update_running`].
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        train: bool,
    ) -> Result<(Var, Option<BatchStats>), AutodiffError> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let running = (store.value(self.running_mean).data(), store.value(self.running_var).data());
        g.batch_norm(x, gamma, beta, running, train)
    }

    pub fn update_running(&self, store: &mut ParamStore, stats: &BatchStats) {
        let m = self.momentum;
        for (r, s) in store.value_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * s;
        }
        for (r, s) in store.value_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * s;
        }
    }
}

/// Hidden stack of Linear → (BatchNorm) → activation blocks.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norms: Vec<Option<BatchNorm1d>>,
    pub activation: Activation,
}

/// Batch statistics produced by one training-mode forward pass, to be applied
/// after the step.
#[derive(Debug, Clone, Default)]
pub struct PendingStats(Vec<(BatchNorm1d, BatchStats)>);

impl PendingStats {
    pub fn push(&mut self, bn: &BatchNorm1d, stats: BatchStats) {
        self.0.push((bn.clone(), stats));
    }

    pub fn apply(self, store: &mut ParamStore) {
        for (bn, stats) in self.0 {
            bn.update_running(store, &stats);
        }
    }
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        activation: Activation,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut prev = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{i}"), prev, h, rng)?);
            norms.push(if batch_norm {
                Some(BatchNorm1d::new(store, &format!("{name}.{i}.bn"), h)?)
            } else {
                None
            });
            prev = h;
        }
        Ok(Self {
            layers,
            norms,
            activation,
        })
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.output)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        train: bool,
        pending: &mut PendingStats,
    ) -> Result<Var, AutodiffError> {
        let mut h = x;
        for (layer, norm) in self.layers.iter().zip(&self.norms) {
            h = layer.forward(g, store, h)?;
            if let Some(bn) = norm {
                let (out, stats) = bn.forward(g, store, h, train)?;
                if let Some(stats) = stats {
                    pending.push(bn, stats);
                }
                h = out;
            }
            h = self.activation.apply(g, h);
        }
        Ok(h)
    }
}

/// LSTM cell with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let w_input = store.add(format!("{name}.w_input"), glorot_normal(input, 4 * hidden, rng))?;
        let w_hidden = store.add(format!("{name}.w_hidden"), glorot_normal(hidden, 4 * hidden, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[4 * hidden]))?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            hidden,
        })
    }

    /// One step: returns (h', c').
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var), AutodiffError> {
        let wx = g.param(store, self.w_input);
        let wh = g.param(store, self.w_hidden);
        let b = g.param(store, self.bias);
        let xi = g.matmul(x, wx)?;
        let hh = g.matmul(h, wh)?;
        let pre = g.add(xi, hh)?;
        let gates = g.add_bias(pre, b)?;
        let n = self.hidden;
        let i = g.slice_last(gates, 0, n)?;
        let f = g.slice_last(gates, n, 2 * n)?;
        let cand = g.slice_last(gates, 2 * n, 3 * n)?;
        let o = g.slice_last(gates, 3 * n, 4 * n)?;
        let i = g.logistic(i);
        let f = g.logistic(f);
        let cand = g.tanh(cand);
        let o = g.logistic(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

/// Stacked LSTM run over a sequence of (rows, input) tensors.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub cells: Vec<LstmCell>,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let inp = if l == 0 { input } else { hidden };
            cells.push(LstmCell::new(store, &format!("{name}.{l}"), inp, hidden, rng)?);
        }
        Ok(Self { cells })
    }

    pub fn hidden(&self) -> usize {
        self.cells.first().map_or(0, |c| c.hidden)
    }

    /// Top-layer outputs, one per time step. States start at zero.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, inputs: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let Some(first) = inputs.first() else {
            return Ok(Vec::new());
        };
        let rows = g.value(*first).rows();
        let mut state: Vec<(Var, Var)> = self
            .cells
            .iter()
            .map(|c| {
                let h = g.constant(Tensor::zeros(&[rows, c.hidden]));
                let s = g.constant(Tensor::zeros(&[rows, c.hidden]));
                (h, s)
            })
            .collect();
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let mut h_in = x;
            for (cell, st) in self.cells.iter().zip(state.iter_mut()) {
                let (h, c) = cell.step(g, store, h_in, st.0, st.1)?;
                *st = (h, c);
                h_in = h;
            }
            outputs.push(h_in);
        }
        Ok(outputs)
    }
}
