//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape once from the end, so each node is visited exactly once
//! and gradient contributions from shared subexpressions are summed.
//! Scalars are `1 × 1` matrices.

use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{s, Array2, Axis};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    NeighborMean(Var, Rc<[Vec<usize>]>),
    SegmentMean(Var, Rc<[(usize, usize)]>),
    Transpose(Var),
    RowNormalize(Var),
    CrossEntropy { logits: Var, targets: Rc<[usize]>, probs: Matrix },
    BceWithLogits { logits: Var, targets: Rc<[f64]> },
}

struct Node {
    value: Matrix,
    op: Op,
    param: Option<String>,
}

/// Recording of a computation for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<String, Var>,
}

const NORM_EPS: f64 = 1e-12;

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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on a non-scalar node");
        m[[0, 0]]
    }

    /// Constant leaf; receives gradient but is not tied to a parameter.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Leaf bound to a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let value = store
            .value(name)
            .ok_or_else(|| Error::structural(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(name.to_string());
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul shape mismatch {:?} x {:?}", va.dim(), vb.dim());
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a, b))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "div");
        let out = self.value(a) / self.value(b);
        self.push(out, Op::Div(a, b))
    }

    /// `a + row` with `row` (1 × c) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ra, ca) = self.shape(a);
        assert_eq!(self.shape(row), (1, ca), "add_row: bias shape mismatch");
        let _ = ra;
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    /// Repeats a `1 × c` row `rows` times.
    pub fn broadcast_rows(&mut self, row: Var, rows: usize) -> Var {
        let (r, c) = self.shape(row);
        assert_eq!(r, 1, "broadcast_rows expects a single row");
        let out = self.value(row).broadcast((rows, c)).expect("broadcast").to_owned();
        self.push(out, Op::BroadcastRows(row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) + k;
        self.push(out, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        self.push(out, Op::Ln(a))
    }

    /// Elementwise clamp; gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Mean over all entries; an empty matrix has mean 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = if m.is_empty() { 0.0 } else { m.sum() / m.len() as f64 };
        self.push(Array2::from_elem((1, 1), v), Op::Mean(a))
    }

    /// Column sums, `r × c -> 1 × c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(out, Op::SumRows(a))
    }

    /// Column means; zero rows give a zero row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let r = m.nrows().max(1) as f64;
        let out = m.sum_axis(Axis(0)).insert_axis(Axis(0)) / r;
        self.push(out, Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let views: Vec<_> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, rows, "concat_cols: row mismatch");
                self.value(p).view()
            })
            .collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0]).1;
        let views: Vec<_> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).1, cols, "concat_rows: column mismatch");
                self.value(p).view()
            })
            .collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Var {
        let m = self.value(a);
        let mut out = Array2::zeros((index.len(), m.ncols()));
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).assign(&m.row(i));
        }
        self.push(out, Op::GatherRows(a, index))
    }

    /// Row `i` of the result is the mean of rows `neighbors[i]` of `a`
    /// (a zero row when the list is empty).
    pub fn neighbor_mean(&mut self, a: Var, neighbors: Rc<[Vec<usize>]>) -> Var {
        let m = self.value(a);
        assert_eq!(neighbors.len(), m.nrows(), "neighbor_mean: adjacency size");
        let mut out = Array2::zeros(m.dim());
        for (i, list) in neighbors.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let mut row = out.row_mut(i);
            for &j in list {
                row += &m.row(j);
            }
            row /= list.len() as f64;
        }
        self.push(out, Op::NeighborMean(a, neighbors))
    }

    /// Means of contiguous row blocks `(start, len)`; empty blocks give zeros.
    pub fn segment_mean(&mut self, a: Var, segments: Rc<[(usize, usize)]>) -> Var {
        let m = self.value(a);
        let mut out = Array2::zeros((segments.len(), m.ncols()));
        for (k, &(start, len)) in segments.iter().enumerate() {
            if len == 0 {
                continue;
            }
            let block = m.slice(s![start..start + len, ..]);
            out.row_mut(k).assign(&(block.sum_axis(Axis(0)) / len as f64));
        }
        self.push(out, Op::SegmentMean(a, segments))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    /// Scales each row to unit L2 norm.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let norm = (row.dot(&row) + NORM_EPS).sqrt();
            row /= norm;
        }
        self.push(out, Op::RowNormalize(a))
    }

    /// Mean softmax cross-entropy of each row of `logits` against its target.
    pub fn cross_entropy(&mut self, logits: Var, targets: Rc<[usize]>) -> Var {
        let m = self.value(logits);
        assert_eq!(m.nrows(), targets.len(), "cross_entropy: target count");
        let probs = softmax_rows(m);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            loss -= probs[[r, t]].max(f64::MIN_POSITIVE).ln();
        }
        let n = targets.len().max(1) as f64;
        self.push(
            Array2::from_elem((1, 1), loss / n),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// computed in the numerically stable logit form. Empty input gives 0.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Rc<[f64]>) -> Var {
        let m = self.value(logits);
        assert_eq!(m.len(), targets.len(), "bce_with_logits: target count");
        let total: f64 = m.iter().zip(targets.iter()).map(|(&z, &y)| bce_logit(z, y)).sum();
        let v = if targets.is_empty() { 0.0 } else { total / targets.len() as f64 };
        self.push(Array2::from_elem((1, 1), v), Op::BceWithLogits { logits, targets })
    }

    /// Runs the reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.dot(&val(*b).t());
                let gb = val(*a).t().dot(g);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g * val(*b));
                accumulate(grads, *b, g * val(*a));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                accumulate(grads, *a, g / vb);
                accumulate(grads, *b, -(g * va) / (vb * vb));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::BroadcastRows(row) => {
                accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, k) => accumulate(grads, *a, g * *k),
            Op::Offset(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let mut ga = g.clone();
                ga.zip_mut_with(val(*a), |d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                accumulate(grads, *a, ga);
            }
            Op::Sigmoid(_) | Op::Exp(_) => {
                let y = &node.value;
                let (a, local) = match &node.op {
                    Op::Sigmoid(a) => (*a, y.mapv(|s| s * (1.0 - s))),
                    Op::Exp(a) => (*a, y.clone()),
                    _ => unreachable!(),
                };
                accumulate(grads, a, g * &local);
            }
            Op::Ln(a) => accumulate(grads, *a, g / val(*a)),
            Op::Clamp(a, lo, hi) => {
                let mut ga = g.clone();
                ga.zip_mut_with(val(*a), |d, &x| {
                    if x < *lo || x > *hi {
                        *d = 0.0
                    }
                });
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let shape = val(*a).dim();
                accumulate(grads, *a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::Mean(a) => {
                let m = val(*a);
                if !m.is_empty() {
                    let k = g[[0, 0]] / m.len() as f64;
                    accumulate(grads, *a, Array2::from_elem(m.dim(), k));
                }
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                let (r, c) = val(*a).dim();
                let mut ga = g.broadcast((r, c)).expect("broadcast").to_owned();
                if matches!(node.op, Op::MeanRows(_)) {
                    ga /= r.max(1) as f64;
                }
                accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    accumulate(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    accumulate(grads, p, g.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut ga = Array2::zeros(val(*a).dim());
                ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, index) => {
                let mut ga = Array2::zeros(val(*a).dim());
                for (r, &i) in index.iter().enumerate() {
                    let mut row = ga.row_mut(i);
                    row += &g.row(r);
                }
                accumulate(grads, *a, ga);
            }
            Op::NeighborMean(a, neighbors) => {
                let mut ga = Array2::zeros(val(*a).dim());
                for (i, list) in neighbors.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let share = g.row(i).to_owned() / list.len() as f64;
                    for &j in list {
                        let mut row = ga.row_mut(j);
                        row += &share;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SegmentMean(a, segments) => {
                let mut ga = Array2::zeros(val(*a).dim());
                for (k, &(start, len)) in segments.iter().enumerate() {
                    if len == 0 {
                        continue;
                    }
                    let share = g.row(k).to_owned() / len as f64;
                    for r in start..start + len {
                        let mut row = ga.row_mut(r);
                        row += &share;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.t().to_owned()),
            Op::RowNormalize(a) => {
                let x = val(*a);
                let y = &node.value;
                let mut ga = Array2::zeros(x.dim());
                for r in 0..x.nrows() {
                    let xr = x.row(r);
                    let norm = (xr.dot(&xr) + NORM_EPS).sqrt();
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj = yr.dot(&gr);
                    ga.row_mut(r).assign(&((&gr - &(&yr * proj)) / norm));
                }
                accumulate(grads, *a, ga);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len().max(1) as f64;
                let mut ga = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    ga[[r, t]] -= 1.0;
                }
                ga *= g[[0, 0]] / n;
                accumulate(grads, *logits, ga);
            }
            Op::BceWithLogits { logits, targets } => {
                if targets.is_empty() {
                    return;
                }
                let z = val(*logits);
                let k = g[[0, 0]] / targets.len() as f64;
                let mut ga = Array2::zeros(z.dim());
                for ((d, &zv), &y) in ga.iter_mut().zip(z.iter()).zip(targets.iter()) {
                    *d = (sigmoid(zv) - y) * k;
                }
                accumulate(grads, *logits, ga);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of a scalar root with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter-leaf gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (i, node) in tape.nodes.iter().enumerate() {
            if let (Some(name), Some(g)) = (&node.param, &self.grads[i]) {
                if let Some(buf) = store.grad_mut(name) {
                    *buf += g;
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-(y ln σ(z) + (1-y) ln(1-σ(z)))` without overflow.
pub fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

/// Returns an error if any value on the path to `v` is non-finite.
pub fn check_finite(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} is not finite")))
    }
}
