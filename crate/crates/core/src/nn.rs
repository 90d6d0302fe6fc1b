//! Layers shared by the language model and the parser.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

/// Affine map `x·W + b`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Matrix::uniform(input_dim, output_dim, limit, rng),
        );
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, output_dim));
        Linear {
            weight,
            bias,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Gate blocks of the combined LSTM matrices, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Candidate,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output];

    fn offset(self) -> usize {
        match self {
            Gate::Input => 0,
            Gate::Forget => 1,
            Gate::Candidate => 2,
            Gate::Output => 3,
        }
    }
}

/// One LSTM cell with optional output projection.
///
/// The input weights `W_i, W_f, W_c, W_o` are stored side by side in
/// `input_weight` (`input_dim × 4H`), likewise the recurrent weights
/// `U_*` (`output_dim × 4H`) and biases (`1 × 4H`). The projection, when
/// present, maps `o⊙tanh(c)` to the exposed (and recurred) state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LstmCell {
    pub input_weight: ParamId,
    pub recurrent_weight: ParamId,
    pub bias: ParamId,
    pub projection: Option<Linear>,
    pub input_dim: usize,
    pub cell_dim: usize,
}

/// Recurrent state `(h, c)` for a batch.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        cell_dim: usize,
        projection: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let output_dim = projection.unwrap_or(cell_dim);
        let limit_in = (1.0 / input_dim as f64).sqrt();
        let limit_rec = (1.0 / output_dim as f64).sqrt();
        let input_weight = store.add(
            format!("{name}.input_weight"),
            Matrix::uniform(input_dim, 4 * cell_dim, limit_in, rng),
        );
        let recurrent_weight = store.add(
            format!("{name}.recurrent_weight"),
            Matrix::uniform(output_dim, 4 * cell_dim, limit_rec, rng),
        );
        let mut b = Matrix::zeros(1, 4 * cell_dim);
        for k in 0..cell_dim {
            b[(0, cell_dim + k)] = 1.0;
        }
        let bias = store.add(format!("{name}.bias"), b);
        let projection =
            projection.map(|p| Linear::new(store, &format!("{name}.projection"), cell_dim, p, rng));
        LstmCell {
            input_weight,
            recurrent_weight,
            bias,
            projection,
            input_dim,
            cell_dim,
        }
    }

    /// Dimension of the exposed state `h`.
    pub fn output_dim(&self) -> usize {
        self.projection
            .map(|p| p.output_dim)
            .unwrap_or(self.cell_dim)
    }

    /// Columns of the combined matrices holding one gate's block.
    pub fn gate_columns(&self, gate: Gate) -> std::ops::Range<usize> {
        let start = gate.offset() * self.cell_dim;
        start..start + self.cell_dim
    }

    /// Explicit all-zero state for `batch` rows.
    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> LstmState {
        let h = tape.constant(Matrix::zeros(batch, self.output_dim()));
        let c = tape.constant(Matrix::zeros(batch, self.cell_dim));
        LstmState { h, c }
    }

    /// One step. With `state = None` the recurrent terms are dropped
    /// entirely: `i=σ(W_i x+b_i)`, …, `c = i⊙c̃`.
    pub fn step(&self, tape: &mut Tape, x: Var, state: Option<LstmState>) -> LstmState {
        let w = tape.param(self.input_weight);
        let b = tape.param(self.bias);
        let mut pre = tape.matmul(x, w);
        if let Some(s) = state {
            let u = tape.param(self.recurrent_weight);
            let hu = tape.matmul(s.h, u);
            pre = tape.add(pre, hu);
        }
        let pre = tape.add_row(pre, b);
        let hc = tape.lstm_cell(pre, state.map(|s| s.c));
        let h = tape.slice_cols(hc, 0, self.cell_dim);
        let c = tape.slice_cols(hc, self.cell_dim, 2 * self.cell_dim);
        let h = match &self.projection {
            Some(p) => p.forward(tape, h),
            None => h,
        };
        LstmState { h, c }
    }
}

/// Runs a cell over time-major inputs starting from an explicit zero state.
/// Returns the exposed state at every step.
/// Inverted dropout: zeroes entries with probability `p` and rescales the
/// rest by `1 / (1 - p)`.
pub fn dropout<R: Rng>(tape: &mut Tape, x: Var, p: f64, rng: &mut R) -> Var {
    if p <= 0.0 {
        return x;
    }
    let (rows, cols) = tape.shape(x);
    let keep = 1.0 / (1.0 - p);
    let mask = Matrix::from_fn(
        rows,
        cols,
        |_, _| if rng.gen::<f64>() < p { 0.0 } else { keep },
    );
    let m = tape.constant(mask);
    tape.mul(x, m)
}

pub fn run_lstm(tape: &mut Tape, cell: &LstmCell, inputs: &[Var]) -> Vec<Var> {
    if inputs.is_empty() {
        return Vec::new();
    }
    let batch = tape.shape(inputs[0]).0;
    let mut state = cell.zero_state(tape, batch);
    let mut outputs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        state = cell.step(tape, x, Some(state));
        outputs.push(state.h);
    }
    outputs
}

/// Trainable convex combination of embedding layers, scaled by `gamma`:
/// `gamma · Σ_j softmax(raw)_j · h_j`. Layers listed in `excluded` get
/// weight exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMix {
    pub raw: Vec<f64>,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<usize>,
}

impl ScalarMix {
    /// Equal weights over `layers` layers, `gamma = 1`.
    pub fn uniform(layers: usize) -> Self {
        ScalarMix {
            raw: vec![0.0; layers],
            gamma: 1.0,
            excluded: Vec::new(),
        }
    }

    pub fn new(raw: Vec<f64>, gamma: f64) -> Self {
        ScalarMix {
            raw,
            gamma,
            excluded: Vec::new(),
        }
    }

    /// Equal weights over `active`, zero elsewhere.
    pub fn over(layers: usize, active: &[usize], gamma: f64) -> Self {
        ScalarMix {
            raw: vec![0.0; layers],
            gamma,
            excluded: (0..layers).filter(|j| !active.contains(j)).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.raw.len()
    }

    /// Normalized weights λ.
    pub fn weights(&self) -> Vec<f64> {
        let active = |j: &usize| !self.excluded.contains(j);
        let max = (0..self.raw.len())
            .filter(active)
            .map(|j| self.raw[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = (0..self.raw.len())
            .map(|j| {
                if active(&j) {
                    (self.raw[j] - max).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / total).collect()
    }

    pub fn apply(&self, layers: &[&[f64]]) -> Result<Vec<f64>> {
        if layers.len() != self.raw.len() {
            return Err(Error::shape(format!(
                "mix over {} layers applied to {}",
                self.raw.len(),
                layers.len()
            )));
        }
        let dim = layers.first().map_or(0, |l| l.len());
        if layers.iter().any(|l| l.len() != dim) {
            return Err(Error::shape("layers of unequal width".to_string()));
        }
        let mut out = vec![0.0; dim];
        for (l, w) in layers.iter().zip(self.weights()) {
            for (o, x) in out.iter_mut().zip(l.iter()) {
                *o += w * x;
            }
        }
        out.iter_mut().for_each(|o| *o *= self.gamma);
        Ok(out)
    }
}
