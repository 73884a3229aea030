//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D matrix; vectors are `n×1` or `1×n` and scalars are
//! `1×1`. Backward rules are themselves recorded as tape operations, so a
//! gradient obtained from [`Tape::grad`] is an ordinary [`Var`] that can be
//! fed into further computation and differentiated again. Gradient matching
//! relies on this: the matching distance is a function of the synthetic-side
//! model gradient, which is a function of the synthetic features.
//!
//! ```
//! use mlgc::autodiff::Tape;
//! use ndarray::array;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(array![[1.0, 2.0]]);
//! let loss = x.mul(x).unwrap().sum();
//! tape.backward(loss).unwrap();
//! assert_eq!(x.grad().unwrap(), array![[2.0, 4.0]]);
//! ```

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{validation, Error, Result};
use crate::graph::CsrMatrix;

type Shape = (usize, usize);

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    SpMM {
        matrix: Rc<CsrMatrix>,
        transpose: Rc<CsrMatrix>,
        rhs: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Affine(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    Softplus(usize),
    Pow(usize, f64),
    Clamp(usize, f64, f64),
    Sum(usize),
    SumAxis(usize),
    Broadcast(usize),
    Transpose(usize),
    Reshape(usize),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    GatherRows(usize, Rc<Vec<usize>>),
    ScatterRows(usize, Rc<Vec<usize>>),
    LogSumExpRows(usize),
    SymEigvals(usize, Rc<Array2<f64>>),
}

struct Node {
    value: Rc<Array2<f64>>,
    op: Op,
    requires_grad: bool,
    from_grad: bool,
    grad: Option<Array2<f64>>,
}

/// Recording of a computation, in topological order.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording_grad: Cell<bool>,
    backward_mark: Cell<Option<usize>>,
    detached_gradient: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording_grad: Cell::new(false),
            backward_mark: Cell::new(None),
            detached_gradient: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Array2<f64>) -> Var<'_> {
        self.push_node(value, Op::Leaf, true)
    }

    /// A constant input; never accumulates gradient.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    fn push_node(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            from_grad: self.recording_grad.get(),
            grad: None,
        });
        Var { tape: self, id }
    }

    fn record(&self, value: Array2<f64>, op: Op, inputs: &[usize]) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        if requires_grad {
            self.push_node(value, op, true)
        } else {
            self.push_node(value, Op::Leaf, false)
        }
    }

    fn value(&self, id: usize) -> Rc<Array2<f64>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// `matrix · rhs` with a constant sparse left operand.
    pub fn spmm<'t>(&'t self, matrix: &Rc<CsrMatrix>, rhs: Var<'t>) -> Result<Var<'t>> {
        self.spmm_with_transpose(Rc::clone(matrix), Rc::new(matrix.transpose()), rhs)
    }

    fn spmm_with_transpose<'t>(
        &'t self,
        matrix: Rc<CsrMatrix>,
        transpose: Rc<CsrMatrix>,
        rhs: Var<'t>,
    ) -> Result<Var<'t>> {
        let value = matrix.matmul_dense(&rhs.value())?;
        Ok(self.record(value, Op::SpMM { matrix, transpose, rhs: rhs.id }, &[rhs.id]))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        self.concat(parts, Axis(0))
    }

    /// Stacks matrices with equal row counts horizontally.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        self.concat(parts, Axis(1))
    }

    fn concat<'t>(&'t self, parts: &[Var<'t>], axis: Axis) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(validation("concatenation of zero matrices"));
        }
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let value = concatenate(axis, &views)
            .map_err(|e| validation(format!("concatenation shape mismatch: {e}")))?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let op = if axis == Axis(0) { Op::ConcatRows(ids.clone()) } else { Op::ConcatCols(ids.clone()) };
        Ok(self.record(value, op, &ids))
    }

    /// Gradients of scalar `loss` with respect to `wrt`, recorded as
    /// differentiable tape values.
    ///
    /// Inputs the loss does not depend on get zero gradients.
    pub fn grad<'t>(&'t self, loss: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if loss.shape() != (1, 1) {
            return Err(validation(format!("loss must be scalar, got {:?}", loss.shape())));
        }
        let previous = self.recording_grad.replace(true);
        let result = self.sweep(loss);
        self.recording_grad.set(previous);
        let adjoints = result?;
        let previous = self.recording_grad.replace(true);
        let out = wrt
            .iter()
            .map(|v| match adjoints.get(v.id).copied().flatten() {
                Some(id) => self.var(id),
                None => self.constant(Array2::zeros(v.shape())),
            })
            .collect();
        self.recording_grad.set(previous);
        Ok(out)
    }

    fn sweep<'t>(&'t self, loss: Var<'t>) -> Result<Vec<Option<usize>>> {
        let mut adjoints: Vec<Option<usize>> = vec![None; loss.id + 1];
        if !self.requires(loss.id) {
            return Ok(adjoints);
        }
        adjoints[loss.id] = Some(self.constant(Array2::ones((1, 1))).id);
        for id in (0..=loss.id).rev() {
            let Some(g) = adjoints[id] else { continue };
            let op = {
                let nodes = self.nodes.borrow();
                if !nodes[id].requires_grad {
                    continue;
                }
                nodes[id].op.clone()
            };
            for (input, contribution) in self.vjp(id, &op, self.var(g))? {
                if !self.requires(input) {
                    continue;
                }
                adjoints[input] = Some(match adjoints[input] {
                    Some(existing) => self.var(existing).add(contribution)?.id,
                    None => contribution.id,
                });
            }
        }
        Ok(adjoints)
    }

    /// Vector-Jacobian products of one recorded op, built from tape ops.
    fn vjp<'t>(&'t self, out: usize, op: &Op, g: Var<'t>) -> Result<Vec<(usize, Var<'t>)>> {
        let out_var = self.var(out);
        Ok(match *op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.var(a), self.var(b));
                vec![(a, g.matmul(vb.t())?), (b, va.t().matmul(g)?)]
            }
            Op::SpMM { ref matrix, ref transpose, rhs } => {
                let back = self.spmm_with_transpose(Rc::clone(transpose), Rc::clone(matrix), g)?;
                vec![(rhs, back)]
            }
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, g.neg())],
            Op::Mul(a, b) => vec![(a, g.mul(self.var(b))?), (b, g.mul(self.var(a))?)],
            Op::Div(a, b) => {
                let vb = self.var(b);
                let ga = g.div(vb)?;
                let gb = g.mul(out_var)?.div(vb)?.neg();
                vec![(a, ga), (b, gb)]
            }
            Op::Affine(a, scale) => vec![(a, g.scale(scale))],
            Op::Relu(a) => {
                let mask = self.value(a).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                vec![(a, g.mul(self.constant(mask))?)]
            }
            Op::Sigmoid(a) => {
                let slope = out_var.mul(out_var.affine(-1.0, 1.0))?;
                vec![(a, g.mul(slope)?)]
            }
            Op::Log(a) => vec![(a, g.div(self.var(a))?)],
            Op::Exp(a) => vec![(a, g.mul(out_var)?)],
            Op::Softplus(a) => vec![(a, g.mul(self.var(a).sigmoid())?)],
            Op::Pow(a, p) => {
                let slope = self.var(a).pow(p - 1.0)?.scale(p);
                vec![(a, g.mul(slope)?)]
            }
            Op::Clamp(a, lo, hi) => {
                let mask = self.value(a).mapv(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 });
                vec![(a, g.mul(self.constant(mask))?)]
            }
            Op::Sum(a) => vec![(a, g.broadcast_to(self.var(a).shape())?)],
            Op::SumAxis(a) => vec![(a, g.broadcast_to(self.var(a).shape())?)],
            Op::Broadcast(a) => vec![(a, g.sum_to(self.var(a).shape())?)],
            Op::Transpose(a) => vec![(a, g.t())],
            Op::Reshape(a) => {
                let (r, c) = self.var(a).shape();
                vec![(a, g.reshape(r, c)?)]
            }
            Op::ConcatRows(ref ids) => {
                let mut start = 0;
                let mut parts = Vec::with_capacity(ids.len());
                for &id in ids {
                    let rows = self.var(id).shape().0;
                    parts.push((id, g.slice_rows(start, rows)?));
                    start += rows;
                }
                parts
            }
            Op::ConcatCols(ref ids) => {
                let mut start = 0;
                let mut parts = Vec::with_capacity(ids.len());
                for &id in ids {
                    let cols = self.var(id).shape().1;
                    parts.push((id, g.slice_cols(start, cols)?));
                    start += cols;
                }
                parts
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.var(a).shape();
                let len = g.shape().0;
                let mut parts = Vec::new();
                if start > 0 {
                    parts.push(self.constant(Array2::zeros((start, cols))));
                }
                parts.push(g);
                if start + len < rows {
                    parts.push(self.constant(Array2::zeros((rows - start - len, cols))));
                }
                vec![(a, self.concat_rows(&parts)?)]
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.var(a).shape();
                let len = g.shape().1;
                let mut parts = Vec::new();
                if start > 0 {
                    parts.push(self.constant(Array2::zeros((rows, start))));
                }
                parts.push(g);
                if start + len < cols {
                    parts.push(self.constant(Array2::zeros((rows, cols - start - len))));
                }
                vec![(a, self.concat_cols(&parts)?)]
            }
            Op::GatherRows(a, ref idx) => {
                let rows = self.var(a).shape().0;
                vec![(a, g.scatter_rows(idx, rows)?)]
            }
            Op::ScatterRows(a, ref idx) => vec![(a, g.gather_rows(idx)?)],
            Op::LogSumExpRows(a) => {
                let va = self.var(a);
                let softmax = va.sub(out_var)?.exp();
                vec![(a, softmax.mul(g)?)]
            }
            Op::SymEigvals(a, ref vectors) => {
                let n = vectors.nrows();
                let v = self.constant(vectors.as_ref().clone());
                let vt = self.constant(vectors.t().to_owned());
                let weighted = v.mul(g.t().broadcast_to((n, n))?)?;
                vec![(a, weighted.matmul(vt)?)]
            }
        })
    }

    /// Runs a full backward pass from `loss`, storing `∂loss/∂t` on every
    /// differentiable value recorded before it.
    ///
    /// A second call without recording anything new is a state error.
    pub fn backward<'t>(&'t self, loss: Var<'t>) -> Result<()> {
        if self.backward_mark.get() == Some(self.len()) {
            return Err(Error::State("backward already ran on this tape; record a new computation first".into()));
        }
        let targets: Vec<Var<'t>> = (0..=loss.id)
            .filter(|&id| self.requires(id))
            .map(|id| self.var(id))
            .collect();
        let grads = self.grad(loss, &targets)?;
        let values: Vec<Array2<f64>> = grads.iter().map(|g| g.value().as_ref().clone()).collect();
        {
            let mut nodes = self.nodes.borrow_mut();
            for (target, value) in targets.iter().zip(values) {
                nodes[target.id].grad = Some(value);
            }
        }
        self.backward_mark.set(Some(self.len()));
        Ok(())
    }
}

fn same_shape(op: &str, a: Shape, b: Shape) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(validation(format!("{op}: shape {a:?} vs {b:?}")))
    }
}

fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Ok(x),
        (1, y) => Ok(y),
        (x, 1) => Ok(x),
        _ => Err(validation(format!("cannot broadcast {a:?} with {b:?}"))),
    };
    Ok((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Array2<f64>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    /// Value of a `1×1` variable.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// Gradient stored by the last [`Tape::backward`], if any.
    pub fn grad(&self) -> Option<Array2<f64>> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    /// Same value, cut from the tape.
    pub fn detach(self) -> Var<'t> {
        if self.tape.nodes.borrow()[self.id].from_grad && self.requires_grad() {
            self.tape.detached_gradient.set(true);
        }
        self.tape.constant(self.value().as_ref().clone())
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let value = self.value().mapv(f);
        self.tape.record(value, op, &[self.id])
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        if a.ncols() != b.nrows() {
            return Err(validation(format!("matmul: {:?} x {:?}", a.dim(), b.dim())));
        }
        let value = a.dot(b.as_ref());
        Ok(self.tape.record(value, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    fn binary(
        self,
        rhs: Var<'t>,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        let shape = broadcast_shape(self.shape(), rhs.shape())?;
        let lhs = self.broadcast_to(shape)?;
        let rhs = rhs.broadcast_to(shape)?;
        let (a, b) = (lhs.value(), rhs.value());
        let mut value = a.as_ref().clone();
        value.zip_mut_with(b.as_ref(), |x, &y| *x = f(*x, y));
        Ok(self.tape.record(value, op(lhs.id, rhs.id), &[lhs.id, rhs.id]))
    }

    /// Elementwise sum; row/column vectors and scalars broadcast.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, |a, b| a + b, Op::Add)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, |a, b| a * b, Op::Mul)
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, |a, b| a / b, Op::Div)
    }

    /// `scale · self + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        self.unary(|v| scale * v + shift, Op::Affine(self.id, scale))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.affine(factor, 0.0)
    }

    pub fn neg(self) -> Var<'t> {
        self.affine(-1.0, 0.0)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|v| v.max(0.0), Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    /// `log(1 + e^x)` in overflow-free form.
    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus, Op::Softplus(self.id))
    }

    /// Natural log; every entry must be positive.
    pub fn log(self) -> Result<Var<'t>> {
        if let Some(bad) = self.value().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(f64::ln, Op::Log(self.id)))
    }

    /// Elementwise power; zero or negative bases are rejected unless the
    /// exponent keeps the result and its derivative finite.
    pub fn pow(self, exponent: f64) -> Result<Var<'t>> {
        let integral = exponent.fract() == 0.0;
        let bad = self.value().iter().copied().find(|&v| {
            (v < 0.0 && !integral) || (v == 0.0 && exponent < 1.0 && exponent != 0.0)
        });
        if let Some(bad) = bad {
            return Err(Error::Domain(format!("{bad}^{exponent} is not differentiable")));
        }
        Ok(self.unary(|v| v.powf(exponent), Op::Pow(self.id, exponent)))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(|v| v.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    /// Sum of all entries as a `1×1`.
    pub fn sum(self) -> Var<'t> {
        let value = Array2::from_elem((1, 1), self.value().sum());
        self.tape.record(value, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        let count = (r * c).max(1) as f64;
        self.sum().scale(1.0 / count)
    }

    /// `axis = 0` sums rows into `1×c`; `axis = 1` sums columns into `r×1`.
    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        let v = self.value();
        let value = match axis {
            0 => v.sum_axis(Axis(0)).insert_axis(Axis(0)),
            _ => v.sum_axis(Axis(1)).insert_axis(Axis(1)),
        };
        self.tape.record(value, Op::SumAxis(self.id), &[self.id])
    }

    /// Replicates a scalar, row or column vector to `shape`.
    pub fn broadcast_to(self, shape: Shape) -> Result<Var<'t>> {
        let own = self.shape();
        if own == shape {
            return Ok(self);
        }
        if broadcast_shape(own, shape)? != shape {
            return Err(validation(format!("cannot broadcast {own:?} to {shape:?}")));
        }
        let value = self
            .value()
            .broadcast(shape)
            .ok_or_else(|| validation(format!("cannot broadcast {own:?} to {shape:?}")))?
            .to_owned();
        Ok(self.tape.record(value, Op::Broadcast(self.id), &[self.id]))
    }

    /// Sums over broadcast dimensions to reduce to `shape`.
    fn sum_to(self, shape: Shape) -> Result<Var<'t>> {
        let own = self.shape();
        let mut out = self;
        if shape.0 == 1 && own.0 != 1 {
            out = out.sum_axis(0);
        }
        if shape.1 == 1 && own.1 != 1 {
            out = out.sum_axis(1);
        }
        same_shape("sum_to", out.shape(), shape)?;
        Ok(out)
    }

    pub fn t(self) -> Var<'t> {
        let value = self.value().t().to_owned();
        self.tape.record(value, Op::Transpose(self.id), &[self.id])
    }

    /// Row-major reshape.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.len() != rows * cols {
            return Err(validation(format!("reshape {:?} to ({rows}, {cols})", v.dim())));
        }
        let flat: Vec<f64> = v.iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("length checked");
        Ok(self.tape.record(value, Op::Reshape(self.id), &[self.id]))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start + len > v.nrows() {
            return Err(validation(format!("row slice {start}..{} of {} rows", start + len, v.nrows())));
        }
        let value = v.slice(s![start..start + len, ..]).to_owned();
        Ok(self.tape.record(value, Op::SliceRows(self.id, start), &[self.id]))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start + len > v.ncols() {
            return Err(validation(format!("column slice {start}..{} of {} columns", start + len, v.ncols())));
        }
        let value = v.slice(s![.., start..start + len]).to_owned();
        Ok(self.tape.record(value, Op::SliceCols(self.id, start), &[self.id]))
    }

    /// Row `i` of the output is row `indices[i]` of `self`.
    pub fn gather_rows(self, indices: &Rc<Vec<usize>>) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.nrows()) {
            return Err(validation(format!("gather row {bad} of {}", v.nrows())));
        }
        let value = v.select(Axis(0), indices);
        Ok(self.tape.record(value, Op::GatherRows(self.id, Rc::clone(indices)), &[self.id]))
    }

    /// Adds row `i` of `self` into row `indices[i]` of a zero `rows×c` matrix.
    pub fn scatter_rows(self, indices: &Rc<Vec<usize>>, rows: usize) -> Result<Var<'t>> {
        let v = self.value();
        if indices.len() != v.nrows() {
            return Err(validation("scatter index count differs from row count"));
        }
        let mut value = Array2::zeros((rows, v.ncols()));
        for (src, &dst) in indices.iter().enumerate() {
            if dst >= rows {
                return Err(validation(format!("scatter row {dst} into {rows} rows")));
            }
            let mut row = value.row_mut(dst);
            row += &v.row(src);
        }
        Ok(self.tape.record(value, Op::ScatterRows(self.id, Rc::clone(indices)), &[self.id]))
    }

    /// Row-wise `log Σ_j exp(x_ij)` as an `r×1` column.
    pub fn logsumexp_rows(self) -> Var<'t> {
        let v = self.value();
        let mut value = Array2::zeros((v.nrows(), 1));
        for (i, row) in v.rows().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            value[[i, 0]] = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        }
        self.tape.record(value, Op::LogSumExpRows(self.id), &[self.id])
    }

    /// Ascending eigenvalues of a symmetric matrix as an `n×1` column.
    ///
    /// The eigenvector basis is held constant in the backward rule, which
    /// gives the exact first derivative for distinct eigenvalues.
    pub fn sym_eigvals(self) -> Result<Var<'t>> {
        let v = self.value();
        let n = v.nrows();
        if v.ncols() != n {
            return Err(validation("eigenvalues of a non-square matrix"));
        }
        let scale = v.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        for i in 0..n {
            for j in 0..i {
                if (v[[i, j]] - v[[j, i]]).abs() > 1e-12 * scale {
                    return Err(validation(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        let (values, vectors) = sym_eigen(&v);
        let value = Array2::from_shape_vec((n, 1), values).expect("n eigenvalues");
        Ok(self.tape.record(value, Op::SymEigvals(self.id, Rc::new(vectors)), &[self.id]))
    }
}

/// Ascending eigenvalues and matching eigenvector columns of a symmetric matrix.
pub(crate) fn sym_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Central-difference gradient estimate of a scalar function, error `O(h²)`.
pub fn finite_difference_oracle(
    mut f: impl FnMut(&Array2<f64>) -> f64,
    x: &Array2<f64>,
    h: f64,
) -> Array2<f64> {
    let mut probe = x.clone();
    let mut out = Array2::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        out[idx] = (up - down) / (2.0 * h);
    }
    out
}

/// Evaluates a loss that differentiates through an inner gradient and
/// returns its value with gradients with respect to each input.
///
/// `build` receives the inputs as differentiable leaves. Detaching an
/// inner gradient inside `build` cuts the second-order path and is reported
/// as a contract violation.
pub fn grad_of_grad<F>(inputs: &[Array2<f64>], build: F) -> Result<(f64, Vec<Array2<f64>>)>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = build(&tape, &leaves)?;
    if tape.detached_gradient.get() {
        return Err(Error::Contract("inner gradient was detached before the outer loss".into()));
    }
    let grads = tape.grad(loss, &leaves)?;
    Ok((loss.item(), grads.iter().map(|g| g.value().as_ref().clone()).collect()))
}
