//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`]s. Calling
//! [`Tape::backward`] on a `1 × 1` loss walks the record in reverse and
//! accumulates gradients for every parameter of the borrowed [`ParamStore`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matrix::{gemm, GemmOperand};
use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "set_flat: length mismatch");
        let mut offset = 0;
        for m in &mut self.values {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            values: self
                .values
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}

/// Gradients aligned with the parameters of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    values: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.values.iter().enumerate().map(|(i, m)| (ParamId(i), m))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|m| m.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for m in &mut self.values {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Rescales so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}

/// Elementwise nonlinearities accepted by the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::UnsupportedPrimitive(other.to_string())),
        }
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        };
        f.write_str(name)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Unfold {
        input: Var,
        lengths: Vec<usize>,
        window: usize,
    },
    MaxPoolGroups {
        input: Var,
        argmax: Vec<usize>,
    },
    LstmCell {
        pre: Var,
        c_prev: Option<Var>,
        gates: Matrix,
        tanh_c: Matrix,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix,
    },
    Sum(Var),
    TileCols(Var, usize),
    SumColGroups(Var, usize),
}

struct Node {
    value: Option<Matrix>,
    op: Op,
}

/// Single-owner recording of a computation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(m)) => m,
            (_, None) => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m[(0, 0)]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hadamard(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1 × c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1, "add_row: bias must be a single row");
        assert_eq!(am.cols(), r.cols(), "add_row: width mismatch");
        let mut v = am.clone();
        let bias = r.as_slice();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(bias) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Adds the `r × 1` column `col` to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (am, c) = (self.value(a), self.value(col));
        assert_eq!(c.cols(), 1, "add_col: bias must be a single column");
        assert_eq!(am.rows(), c.rows(), "add_col: height mismatch");
        let mut v = am.clone();
        for i in 0..v.rows() {
            let b = c[(i, 0)];
            v.row_mut(i).iter_mut().for_each(|x| *x += b);
        }
        self.push(v, Op::AddCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Multiplies `a` by the `1 × 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let v = self.value(a).scale(sv);
        self.push(v, Op::MulScalar(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Tanh => self.tanh(a),
            Activation::Relu => self.relu(a),
            Activation::Identity => a,
        }
    }

    /// Applies a nonlinearity by name; unknown names are rejected.
    pub fn apply(&mut self, primitive: &str, a: Var) -> Result<Var> {
        match primitive {
            "log" => Ok(self.log(a)),
            "softmax" => Ok(self.softmax_rows(a)),
            other => {
                let act: Activation = other.parse()?;
                Ok(self.activate(a, act))
            }
        }
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols: row mismatch");
            let w = m.cols();
            for i in 0..rows {
                v.row_mut(i)[offset..offset + w].copy_from_slice(m.row(i));
            }
            offset += w;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows: column mismatch");
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        let v = Matrix::from_vec(rows, cols, data).expect("consistent concat");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_rows(start, end);
        self.push(v, Op::SliceRows(a, start))
    }

    /// Row `i` of the result is row `indices[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, indices: Vec<usize>) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            data.extend_from_slice(t.row(i));
        }
        let v = Matrix::from_vec(indices.len(), cols, data).expect("gather shape");
        self.push(v, Op::GatherRows(table, indices))
    }

    /// Sliding windows over stacked sequences.
    ///
    /// `input` stacks sequences of `lengths[n]` rows each (every length at
    /// least `window`). Window `p` of sequence `n` concatenates its rows
    /// `p .. p + window`; output rows are windows in sequence order.
    pub fn unfold(&mut self, input: Var, lengths: Vec<usize>, window: usize) -> Var {
        let m = self.value(input);
        assert!(window >= 1, "unfold: empty window");
        assert_eq!(lengths.iter().sum::<usize>(), m.rows(), "unfold: lengths");
        let d = m.cols();
        let total: usize = lengths
            .iter()
            .map(|&l| {
                assert!(l >= window, "unfold: sequence shorter than window");
                l - window + 1
            })
            .sum();
        let mut v = Matrix::zeros(total, window * d);
        let mut start = 0;
        let mut out_row = 0;
        for &len in &lengths {
            for p in 0..=len - window {
                let out = v.row_mut(out_row);
                for k in 0..window {
                    out[k * d..(k + 1) * d].copy_from_slice(m.row(start + p + k));
                }
                out_row += 1;
            }
            start += len;
        }
        self.push(
            v,
            Op::Unfold {
                input,
                lengths,
                window,
            },
        )
    }

    /// Column-wise max over consecutive row groups of the given sizes.
    pub fn max_pool_groups(&mut self, input: Var, groups: &[usize]) -> Var {
        let m = self.value(input);
        assert_eq!(groups.iter().sum::<usize>(), m.rows(), "max_pool: groups");
        let c = m.cols();
        let mut v = Matrix::zeros(groups.len(), c);
        let mut argmax = vec![0usize; groups.len() * c];
        let mut start = 0;
        for (s, &g) in groups.iter().enumerate() {
            assert!(g >= 1, "max_pool: empty group");
            for j in 0..c {
                let mut best = start;
                for r in start + 1..start + g {
                    if m[(r, j)] > m[(best, j)] {
                        best = r;
                    }
                }
                v[(s, j)] = m[(best, j)];
                argmax[s * c + j] = best;
            }
            start += g;
        }
        self.push(v, Op::MaxPoolGroups { input, argmax })
    }

    /// LSTM cell nonlinearity.
    ///
    /// `pre` holds gate pre-activations `[i | f | c̃ | o]` (`B × 4H`). Returns
    /// `[h | c]` (`B × 2H`) with `c = f⊙c_prev + i⊙c̃` (or `i⊙c̃` without a
    /// previous cell) and `h = o⊙tanh(c)`.
    pub fn lstm_cell(&mut self, pre: Var, c_prev: Option<Var>) -> Var {
        let p = self.value(pre);
        assert_eq!(p.cols() % 4, 0, "lstm_cell: pre-activation width");
        let (b, h4) = p.shape();
        let h = h4 / 4;
        if let Some(cp) = c_prev {
            assert_eq!(self.shape(cp), (b, h), "lstm_cell: previous cell shape");
        }
        let mut gates = Matrix::zeros(b, h4);
        let mut tanh_c = Matrix::zeros(b, h);
        let mut out = Matrix::zeros(b, 2 * h);
        for r in 0..b {
            let src = p.row(r);
            let g = gates.row_mut(r);
            for k in 0..h {
                g[k] = sigmoid(src[k]);
                g[h + k] = sigmoid(src[h + k]);
                g[2 * h + k] = src[2 * h + k].tanh();
                g[3 * h + k] = sigmoid(src[3 * h + k]);
            }
        }
        for r in 0..b {
            let g = gates.row(r);
            let prev = c_prev.map(|cp| self.value(cp).row(r));
            let o = out.row_mut(r);
            let tc = tanh_c.row_mut(r);
            for k in 0..h {
                let input_term = g[k] * g[2 * h + k];
                let c = match prev {
                    Some(prev) => g[h + k] * prev[k] + input_term,
                    None => input_term,
                };
                tc[k] = c.tanh();
                o[k] = g[3 * h + k] * tc[k];
                o[h + k] = c;
            }
        }
        self.push(
            out,
            Op::LstmCell {
                pre,
                c_prev,
                gates,
                tanh_c,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. Rows whose target is `None` are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "cross_entropy: target count");
        let mut probs = l.clone();
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let row = probs.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            if let Some(t) = *t {
                loss += max + total.ln() - l[(r, t)];
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// Repeats the columns of `a` `times` times side by side.
    pub fn tile_cols(&mut self, a: Var, times: usize) -> Var {
        let m = self.value(a);
        let c = m.cols();
        let mut v = Matrix::zeros(m.rows(), c * times);
        for i in 0..m.rows() {
            let src = m.row(i);
            let dst = v.row_mut(i);
            for k in 0..times {
                dst[k * c..(k + 1) * c].copy_from_slice(src);
            }
        }
        self.push(v, Op::TileCols(a, times))
    }

    /// Sums consecutive groups of `group` columns.
    pub fn sum_col_groups(&mut self, a: Var, group: usize) -> Var {
        let m = self.value(a);
        assert!(
            group >= 1 && m.cols().is_multiple_of(group),
            "sum_col_groups: ragged"
        );
        let groups = m.cols() / group;
        let mut v = Matrix::zeros(m.rows(), groups);
        for i in 0..m.rows() {
            let src = m.row(i);
            for g in 0..groups {
                v[(i, g)] = src[g * group..(g + 1) * group].iter().sum();
            }
        }
        self.push(v, Op::SumColGroups(a, group))
    }

    /// Gradients of the `1 × 1` node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut out = self.params.zero_gradients();
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, av.shape());
                    gemm(
                        1.0,
                        GemmOperand::plain(&g),
                        GemmOperand::transposed(bv),
                        1.0,
                        ga,
                    );
                    let gb = slot(&mut grads, *b, bv.shape());
                    gemm(
                        1.0,
                        GemmOperand::transposed(av),
                        GemmOperand::plain(&g),
                        1.0,
                        gb,
                    );
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, av.shape());
                    gemm(1.0, GemmOperand::plain(&g), GemmOperand::plain(bv), 1.0, ga);
                    let gb = slot(&mut grads, *b, bv.shape());
                    gemm(
                        1.0,
                        GemmOperand::transposed(&g),
                        GemmOperand::plain(av),
                        1.0,
                        gb,
                    );
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    slot(&mut grads, *a, gt.shape()).add_assign(&gt);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    slot(&mut grads, *a, g.shape()).add_assign(&g);
                    slot(&mut grads, *b, g.shape()).scaled_add_assign(-1.0, &g);
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(self.value(*b));
                    let db = g.hadamard(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    slot(&mut grads, *a, g.shape()).add_assign(&g);
                    let gr = slot(&mut grads, *row, (1, g.cols()));
                    for i in 0..g.rows() {
                        for (acc, x) in gr.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                }
                Op::AddCol(a, col) => {
                    slot(&mut grads, *a, g.shape()).add_assign(&g);
                    let gc = slot(&mut grads, *col, (g.rows(), 1));
                    for i in 0..g.rows() {
                        gc[(i, 0)] += g.row(i).iter().sum::<f64>();
                    }
                }
                Op::Scale(a, s) => {
                    slot(&mut grads, *a, g.shape()).scaled_add_assign(*s, &g);
                }
                Op::MulScalar(a, s) => {
                    let sv = self.scalar(*s);
                    let av = self.value(*a);
                    let ds: f64 = g
                        .as_slice()
                        .iter()
                        .zip(av.as_slice())
                        .map(|(x, y)| x * y)
                        .sum();
                    slot(&mut grads, *a, g.shape()).scaled_add_assign(sv, &g);
                    slot(&mut grads, *s, (1, 1))[(0, 0)] += ds;
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    let d = g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi));
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let d = g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi));
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let y = node.value.as_ref().unwrap();
                    let d = g.zip_map(y, |gi, yi| if yi > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Log(a) => {
                    let d = g.zip_map(self.value(*a), |gi, xi| gi / xi);
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, w) = self.shape(p);
                        let gp = slot(&mut grads, p, (r, w));
                        for i in 0..r {
                            for (acc, x) in gp.row_mut(i).iter_mut().zip(&g.row(i)[offset..]) {
                                *acc += x;
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let gp = slot(&mut grads, p, (r, c));
                        let src = &g.as_slice()[offset * c..(offset + r) * c];
                        for (acc, x) in gp.as_mut_slice().iter_mut().zip(src) {
                            *acc += x;
                        }
                        offset += r;
                    }
                }
                Op::SliceCols(a, start) => {
                    let shape = self.shape(*a);
                    let ga = slot(&mut grads, *a, shape);
                    for i in 0..g.rows() {
                        for (acc, x) in ga.row_mut(i)[*start..].iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let shape = self.shape(*a);
                    let c = shape.1;
                    let ga = slot(&mut grads, *a, shape);
                    let dst = &mut ga.as_mut_slice()[start * c..(start + g.rows()) * c];
                    for (acc, x) in dst.iter_mut().zip(g.as_slice()) {
                        *acc += x;
                    }
                }
                Op::GatherRows(table, indices) => {
                    let shape = self.shape(*table);
                    let gt = slot(&mut grads, *table, shape);
                    for (r, &i) in indices.iter().enumerate() {
                        for (acc, x) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                }
                Op::Unfold {
                    input,
                    lengths,
                    window,
                } => {
                    let shape = self.shape(*input);
                    let d = shape.1;
                    let gi = slot(&mut grads, *input, shape);
                    let mut start = 0;
                    let mut out_row = 0;
                    for &len in lengths {
                        for p in 0..=len - window {
                            let src = g.row(out_row);
                            for k in 0..*window {
                                let dst = gi.row_mut(start + p + k);
                                for (acc, x) in dst.iter_mut().zip(&src[k * d..(k + 1) * d]) {
                                    *acc += x;
                                }
                            }
                            out_row += 1;
                        }
                        start += len;
                    }
                }
                Op::MaxPoolGroups { input, argmax } => {
                    let shape = self.shape(*input);
                    let c = shape.1;
                    let gi = slot(&mut grads, *input, shape);
                    for (k, &r) in argmax.iter().enumerate() {
                        let (s, j) = (k / c, k % c);
                        gi[(r, j)] += g[(s, j)];
                    }
                }
                Op::LstmCell {
                    pre,
                    c_prev,
                    gates,
                    tanh_c,
                } => {
                    let (b, h4) = gates.shape();
                    let h = h4 / 4;
                    let mut dpre = Matrix::zeros(b, h4);
                    let mut dprev = c_prev.map(|_| Matrix::zeros(b, h));
                    for r in 0..b {
                        let gt = gates.row(r);
                        let tc = tanh_c.row(r);
                        let gr = g.row(r);
                        let prev = c_prev.map(|cp| self.value(cp).row(r));
                        let dp = dpre.row_mut(r);
                        for k in 0..h {
                            let (i, f, cc, o) = (gt[k], gt[h + k], gt[2 * h + k], gt[3 * h + k]);
                            let dh = gr[k];
                            let dc = gr[h + k] + dh * o * (1.0 - tc[k] * tc[k]);
                            dp[k] = dc * cc * i * (1.0 - i);
                            dp[2 * h + k] = dc * i * (1.0 - cc * cc);
                            dp[3 * h + k] = dh * tc[k] * o * (1.0 - o);
                            if let Some(prev) = prev {
                                dp[h + k] = dc * prev[k] * f * (1.0 - f);
                            }
                            if let Some(dprev) = dprev.as_mut() {
                                dprev[(r, k)] = dc * f;
                            }
                        }
                    }
                    accumulate(&mut grads, *pre, dpre);
                    if let (Some(cp), Some(d)) = (c_prev, dprev) {
                        accumulate(&mut grads, *cp, d);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for (j, out) in d.row_mut(i).iter_mut().enumerate() {
                            *out = y[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g[(0, 0)];
                    let mut d = probs.scale(scale);
                    for (r, t) in targets.iter().enumerate() {
                        match *t {
                            Some(t) => d[(r, t)] -= scale,
                            None => d.row_mut(r).fill(0.0),
                        }
                    }
                    accumulate(&mut grads, *logits, d);
                }
                Op::Sum(a) => {
                    let s = g[(0, 0)];
                    let shape = self.shape(*a);
                    slot(&mut grads, *a, shape)
                        .as_mut_slice()
                        .iter_mut()
                        .for_each(|x| *x += s);
                }
                Op::TileCols(a, times) => {
                    let shape = self.shape(*a);
                    let c = shape.1;
                    let ga = slot(&mut grads, *a, shape);
                    for i in 0..g.rows() {
                        let src = g.row(i);
                        let dst = ga.row_mut(i);
                        for k in 0..*times {
                            for (acc, x) in dst.iter_mut().zip(&src[k * c..(k + 1) * c]) {
                                *acc += x;
                            }
                        }
                    }
                }
                Op::SumColGroups(a, group) => {
                    let shape = self.shape(*a);
                    let ga = slot(&mut grads, *a, shape);
                    for i in 0..g.rows() {
                        let dst = ga.row_mut(i);
                        for (j, acc) in dst.iter_mut().enumerate() {
                            *acc += g[(i, j / group)];
                        }
                    }
                }
            }
        }
        out
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

/// Adds `d` into the gradient of `v`, taking ownership when it is the first.
fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&d),
        empty => *empty = Some(d),
    }
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let mut store = ParamStore::new();
        let p = store.add("p", Matrix::row_vector(&[1.5, -2.0, 0.25]));
        let unused = store.add("unused", Matrix::row_vector(&[3.0]));
        let mut tape = Tape::new(&store);
        let pv = tape.param(p);
        let sq = tape.mul(pv, pv);
        let loss = tape.sum(sq);
        assert_eq!(tape.scalar(loss), 1.5 * 1.5 + 4.0 + 0.0625);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(p).as_slice(), &[3.0, -4.0, 0.5]);
        assert_eq!(grads.get(unused).as_slice(), &[0.0]);
    }

    #[test]
    fn unknown_primitive_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::row_vector(&[1.0]));
        assert!(matches!(
            tape.apply("gelu", x),
            Err(Error::UnsupportedPrimitive(name)) if name == "gelu"
        ));
        assert!(tape.apply("tanh", x).is_ok());
    }

    #[test]
    fn cross_entropy_uniform() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let logits = tape.constant(Matrix::zeros(2, 4));
        let loss = tape.cross_entropy(logits, vec![Some(1), None]);
        assert!((tape.scalar(loss) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn max_pool_and_unfold_shapes() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::from_fn(6, 2, |i, j| (i * 2 + j) as f64));
        let u = tape.unfold(x, vec![3, 3], 2);
        assert_eq!(tape.shape(u), (4, 4));
        assert_eq!(tape.value(u).row(1), &[2.0, 3.0, 4.0, 5.0]);
        let p = tape.max_pool_groups(u, &[2, 2]);
        assert_eq!(tape.value(p).row(1), &[8.0, 9.0, 10.0, 11.0]);
        let ragged = tape.unfold(x, vec![2, 4], 2);
        assert_eq!(tape.shape(ragged), (4, 4));
        assert_eq!(tape.value(ragged).row(1), &[4.0, 5.0, 6.0, 7.0]);
    }
}
