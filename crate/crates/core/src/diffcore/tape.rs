//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter the
//! tape as leaves through [`Tape::param`]; [`Tape::backward`] seeds the chosen
//! output with ones (so the scalar being differentiated is the sum of that
//! output's entries) and walks the record in reverse.

use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{softmax_in_place, Matrix};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    Silu(Var),
    Gelu(Var),
    Softmax(Var),
    OuterAdd(Var, Var),
    NormRows(Var),
    NormCols(Var),
    MeanRows(Var),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Rc<Vec<usize>>),
    Loss {
        logits: Var,
        target: usize,
        weight: f64,
        gamma: f64,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by a backward pass.
pub struct Grads(Vec<Option<Matrix>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0[v.0].as_ref()
    }
}

/// One forward pass worth of recorded operations.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    train: bool,
    rng: ChaCha8Rng,
    buffer_updates: Vec<(ParamId, Matrix)>,
}

impl<'p> Tape<'p> {
    /// Evaluation-mode tape: dropout is the identity, batch norm uses running
    /// statistics.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            buffer_updates: Vec::new(),
        }
    }

    /// Training-mode tape. `seed` drives the dropout masks.
    pub fn training(params: &'p ParamStore, seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input (no gradient flows into it).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// The tape leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = self.params.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable);
        self.param_vars.insert(id, v);
        v
    }

    /// Records a new value for a non-trainable buffer, applied by the caller
    /// once the tape is dropped.
    pub fn record_buffer_update(&mut self, id: ParamId, value: Matrix) {
        self.buffer_updates.push((id, value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Matrix)> {
        std::mem::take(&mut self.buffer_updates)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// Adds the `1 × D` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(self.shape(b), (1, cols), "add_row: bias must be 1x{cols}");
        let mut v = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..rows {
            for (x, bv) in v.row_mut(r).iter_mut().zip(&bias) {
                *x += bv;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::AddRow(a, b), rg)
    }

    /// Multiplies every row of `a` elementwise by the `1 × D` row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(self.shape(b), (1, cols), "mul_row: scale must be 1x{cols}");
        let mut v = self.value(a).clone();
        let scale = self.value(b).data().to_vec();
        for r in 0..rows {
            for (x, s) in v.row_mut(r).iter_mut().zip(&scale) {
                *x *= s;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MulRow(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(v, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// ELU with alpha 1.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    /// Swish / SiLU: `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).softmax_rows();
        let rg = self.rg(a);
        self.push(v, Op::Softmax(a), rg)
    }

    /// Row softmax restricted to entries where `mask` is true. Every row must
    /// keep at least one entry.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Rc<Vec<bool>>) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(mask.len(), rows * cols, "mask shape mismatch");
        let mut v = self.value(a).clone();
        for r in 0..rows {
            let m = &mask[r * cols..(r + 1) * cols];
            assert!(m.iter().any(|&k| k), "row {r} has no unmasked entry");
            softmax_in_place(v.row_mut(r), Some(m));
        }
        let rg = self.rg(a);
        self.push(v, Op::Softmax(a), rg)
    }

    /// `out[i][j] = col[i] + row[j]` for a `T × 1` column and a `1 × S` row.
    pub fn outer_add(&mut self, col: Var, row: Var) -> Var {
        let (t, one) = self.shape(col);
        assert_eq!(one, 1, "outer_add: first operand must be a column");
        let (one, s) = self.shape(row);
        assert_eq!(one, 1, "outer_add: second operand must be a row");
        let mut v = Matrix::zeros(t, s);
        for i in 0..t {
            let ci = self.value(col).get(i, 0);
            for j in 0..s {
                v.set(i, j, ci + self.value(row).get(0, j));
            }
        }
        let rg = self.rg(col) || self.rg(row);
        self.push(v, Op::OuterAdd(col, row), rg)
    }

    /// Standardizes each row to zero mean and unit variance.
    pub fn norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..x.rows() {
            standardize(v.row_mut(r));
        }
        let rg = self.rg(a);
        self.push(v, Op::NormRows(a), rg)
    }

    /// Standardizes each column over the rows (batch statistics).
    pub fn norm_cols(&mut self, a: Var) -> Var {
        let xt = self.value(a).transpose();
        let mut vt = xt;
        for r in 0..vt.rows() {
            standardize(vt.row_mut(r));
        }
        let v = vt.transpose();
        let rg = self.rg(a);
        self.push(v, Op::NormCols(a), rg)
    }

    /// Mean over the time axis: `T × D → 1 × D`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).col_means();
        let rg = self.rg(a);
        self.push(v, Op::MeanRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::from_vec(1, 1, vec![self.value(a).sum()]);
        let rg = self.rg(a);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols: row count mismatch");
            for r in 0..rows {
                v.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows: column count mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_rows(start, len);
        let rg = self.rg(a);
        self.push(v, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_cols(start, len);
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, start), rg)
    }

    /// Row lookup: `out[i] = table[indices[i]]`.
    pub fn gather_rows(&mut self, table: Var, indices: Rc<Vec<usize>>) -> Var {
        let t = self.value(table);
        let mut v = Matrix::zeros(indices.len(), t.cols());
        for (i, &ix) in indices.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(ix));
        }
        let rg = self.rg(table);
        self.push(v, Op::Gather(table, indices), rg)
    }

    /// Inverted dropout. Identity outside training mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.train || rate <= 0.0 {
            return a;
        }
        let (r, c) = self.shape(a);
        let keep = 1.0 / (1.0 - rate);
        let data = (0..r * c)
            .map(|_| {
                if self.rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let mask = self.constant(Matrix::from_vec(r, c, data));
        self.mul(a, mask)
    }

    /// Class-weighted focal cross-entropy of one `1 × K` logit row:
    /// `-weight · (1 - p_t)^gamma · log p_t`. With `gamma = 0` this is the
    /// weighted cross-entropy.
    pub fn class_loss(&mut self, logits: Var, target: usize, weight: f64, gamma: f64) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows(), 1, "class_loss expects a single logit row");
        assert!(target < z.cols(), "target out of range");
        let value = focal_value(z.data(), target, weight, gamma);
        let rg = self.rg(logits);
        self.push(
            Matrix::from_vec(1, 1, vec![value]),
            Op::Loss {
                logits,
                target,
                weight,
                gamma,
            },
            rg,
        )
    }

    /// Backward pass from `out`, seeded with ones.
    pub fn backward(&self, out: Var) -> Grads {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let (r, c) = self.shape(out);
        grads[out.0] = Some(Matrix::filled(r, c, 1.0));
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads(grads)
    }

    /// Backward pass from `out`, returning gradients of trainable parameters.
    pub fn backward_params(&self, out: Var) -> ParamGrads {
        let grads = self.backward(out);
        let mut pairs: Vec<(ParamId, Matrix)> = self
            .param_vars
            .iter()
            .filter(|(id, _)| self.params.get(**id).trainable)
            .map(|(&id, &v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| {
                    let (r, c) = self.shape(v);
                    Matrix::zeros(r, c)
                });
                (id, g)
            })
            .collect();
        pairs.sort_by_key(|(id, _)| *id);
        ParamGrads(pairs)
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.matmul(self.value(*b)));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, g.t_matmul(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.rg(*b) {
                    self.acc(grads, *b, g.col_sums());
                }
            }
            Op::MulRow(a, b) => {
                let s = self.value(*b);
                if self.rg(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        for (x, sv) in ga.row_mut(r).iter_mut().zip(s.data()) {
                            *x *= sv;
                        }
                    }
                    self.acc(grads, *a, ga);
                }
                if self.rg(*b) {
                    let prod = g.zip_map(self.value(*a), |x, y| x * y);
                    self.acc(grads, *b, prod.col_sums());
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|x| x * s)),
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Tanh(a) => self.acc(grads, *a, g.zip_map(y, |d, t| d * (1.0 - t * t))),
            Op::Sigmoid(a) => self.acc(grads, *a, g.zip_map(y, |d, s| d * s * (1.0 - s))),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, g.zip_map(x, |d, x| if x > 0.0 { d } else { 0.0 }));
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                let mut ga = g.clone();
                for ((d, &xv), &yv) in ga.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    if xv <= 0.0 {
                        *d *= yv + 1.0;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                self.acc(
                    grads,
                    *a,
                    g.zip_map(x, |d, x| if x > 0.0 { d } else { d * slope }),
                );
            }
            Op::Silu(a) => {
                let x = self.value(*a);
                self.acc(
                    grads,
                    *a,
                    g.zip_map(x, |d, x| {
                        let s = sigmoid(x);
                        d * (s + x * s * (1.0 - s))
                    }),
                );
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                self.acc(
                    grads,
                    *a,
                    g.zip_map(x, |d, x| {
                        let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    }),
                );
            }
            Op::Softmax(a) => {
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, d)| p * d).sum();
                    for (o, (p, d)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (d - dot);
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::OuterAdd(col, row) => {
                if self.rg(*col) {
                    let sums: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                    self.acc(grads, *col, Matrix::from_vec(g.rows(), 1, sums));
                }
                if self.rg(*row) {
                    self.acc(grads, *row, g.col_sums());
                }
            }
            Op::NormRows(a) => {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    standardize_backward(x.row(r), y.row(r), g.row(r), ga.row_mut(r));
                }
                self.acc(grads, *a, ga);
            }
            Op::NormCols(a) => {
                let xt = self.value(*a).transpose();
                let yt = y.transpose();
                let gt = g.transpose();
                let mut gat = Matrix::zeros(xt.rows(), xt.cols());
                for r in 0..xt.rows() {
                    standardize_backward(xt.row(r), yt.row(r), gt.row(r), gat.row_mut(r));
                }
                self.acc(grads, *a, gat.transpose());
            }
            Op::MeanRows(a) => {
                let (rows, cols) = self.shape(*a);
                let mut ga = Matrix::zeros(rows, cols);
                let inv = 1.0 / rows as f64;
                for r in 0..rows {
                    for (o, d) in ga.row_mut(r).iter_mut().zip(g.data()) {
                        *o = d * inv;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let (rows, cols) = self.shape(*a);
                self.acc(grads, *a, Matrix::filled(rows, cols, g.get(0, 0)));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    if self.rg(p) {
                        self.acc(grads, p, g.slice_cols(offset, c));
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let r = self.shape(p).0;
                    if self.rg(p) {
                        self.acc(grads, p, g.slice_rows(offset, r));
                    }
                    offset += r;
                }
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut ga = Matrix::zeros(rows, cols);
                for r in 0..g.rows() {
                    ga.row_mut(start + r).copy_from_slice(g.row(r));
                }
                self.acc(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut ga = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                self.acc(grads, *a, ga);
            }
            Op::Gather(table, indices) => {
                let (rows, cols) = self.shape(*table);
                let mut ga = Matrix::zeros(rows, cols);
                for (i, &ix) in indices.iter().enumerate() {
                    for (o, d) in ga.row_mut(ix).iter_mut().zip(g.row(i)) {
                        *o += d;
                    }
                }
                self.acc(grads, *table, ga);
            }
            Op::Loss {
                logits,
                target,
                weight,
                gamma,
            } => {
                let z = self.value(*logits);
                let mut dz = focal_grad(z.data(), *target, *weight, *gamma);
                let upstream = g.get(0, 0);
                for v in &mut dz {
                    *v *= upstream;
                }
                self.acc(grads, *logits, Matrix::from_vec(1, z.cols(), dz));
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn standardize(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    for v in row.iter_mut() {
        *v = (*v - mean) * inv;
    }
}

fn standardize_backward(x: &[f64], y: &[f64], g: &[f64], out: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    let g_mean = g.iter().sum::<f64>() / n;
    let gy_mean = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
    for ((o, &gv), &yv) in out.iter_mut().zip(g).zip(y) {
        *o = inv * (gv - g_mean - yv * gy_mean);
    }
}

/// `log softmax(z)[target]` computed with max subtraction.
pub(crate) fn log_prob(z: &[f64], target: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[target] - max - lse
}

/// `-weight · (1 - p_t)^gamma · log p_t`.
pub(crate) fn focal_value(z: &[f64], target: usize, weight: f64, gamma: f64) -> f64 {
    let lp = log_prob(z, target);
    let p = lp.exp();
    -weight * (1.0 - p).powf(gamma) * lp
}

fn focal_grad(z: &[f64], target: usize, weight: f64, gamma: f64) -> Vec<f64> {
    let mut probs = z.to_vec();
    softmax_in_place(&mut probs, None);
    let lp = log_prob(z, target);
    let pt = lp.exp();
    let q = 1.0 - pt;
    let modulating = q.powf(gamma);
    let correction = if gamma == 0.0 || q <= 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * pt * lp
    };
    let coeff = -weight * (modulating - correction);
    probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let delta = if j == target { 1.0 } else { 0.0 };
            coeff * (delta - pj)
        })
        .collect()
}
