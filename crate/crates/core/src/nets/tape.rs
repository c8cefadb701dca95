//! Reverse-mode differentiation over 2-D tensors.
//!
//! Every value is a matrix whose rows are batch samples. Nodes are appended
//! in evaluation order, so a single reverse sweep visits them topologically.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{PpdeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    RowSum(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Array2<f64>, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::MatMul(a, b), grad)
    }

    /// `a + b` with the single-row `b` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::AddBias(a, b), grad)
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::Add(a, b), grad)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::Sub(a, b), grad)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let grad = self.g(a) || self.g(b);
        self.push(value, Op::Mul(a, b), grad)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let grad = self.g(a);
        self.push(value, Op::Scale(a, c), grad)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let grad = self.g(a);
        self.push(value, Op::Relu(a), grad)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let grad = self.g(a);
        self.push(value, Op::Sigmoid(a), grad)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let grad = self.g(a);
        self.push(value, Op::Tanh(a), grad)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        let grad = self.g(a);
        self.push(value, Op::Square(a), grad)
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let grad = self.g(a);
        self.push(value, Op::Sum(a), grad)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sum, `[rows, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let grad = self.g(a);
        self.push(value, Op::RowSum(a), grad)
    }

    pub fn slice_rows(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let value = self.value(a).slice(s![lo..hi, ..]).to_owned();
        let grad = self.g(a);
        self.push(value, Op::SliceRows(a, lo), grad)
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let value = self.value(a).slice(s![.., lo..hi]).to_owned();
        let grad = self.g(a);
        self.push(value, Op::SliceCols(a, lo), grad)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| PpdeError::Shape(format!("row concatenation: {e}")))?;
        let grad = parts.iter().any(|&p| self.g(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), grad))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(PpdeError::Shape(format!(
                "loss must be a 1x1 scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.g(*a) {
                        let bv = self.value(*b);
                        let ga = self.grad_slot(&mut grads, *a);
                        general_mat_mul(1.0, &gy, &bv.t(), 1.0, ga);
                    }
                    if self.g(*b) {
                        let av = self.value(*a);
                        let gb = self.grad_slot(&mut grads, *b);
                        general_mat_mul(1.0, &av.t(), &gy, 1.0, gb);
                    }
                }
                Op::AddBias(a, b) => {
                    if self.g(*b) {
                        let col = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                        *self.grad_slot(&mut grads, *b) += &col;
                    }
                    if self.g(*a) {
                        *self.grad_slot(&mut grads, *a) += &gy;
                    }
                }
                Op::Add(a, b) => {
                    if self.g(*a) {
                        *self.grad_slot(&mut grads, *a) += &gy;
                    }
                    if self.g(*b) {
                        *self.grad_slot(&mut grads, *b) += &gy;
                    }
                }
                Op::Sub(a, b) => {
                    if self.g(*a) {
                        *self.grad_slot(&mut grads, *a) += &gy;
                    }
                    if self.g(*b) {
                        *self.grad_slot(&mut grads, *b) -= &gy;
                    }
                }
                Op::Mul(a, b) => {
                    if self.g(*a) {
                        let bv = self.value(*b);
                        let ga = self.grad_slot(&mut grads, *a);
                        Zip::from(ga).and(&gy).and(bv).for_each(|g, &d, &y| *g += d * y);
                    }
                    if self.g(*b) {
                        let av = self.value(*a);
                        let gb = self.grad_slot(&mut grads, *b);
                        Zip::from(gb).and(&gy).and(av).for_each(|g, &d, &x| *g += d * x);
                    }
                }
                Op::Scale(a, c) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    ga.scaled_add(*c, &gy);
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let ga = self.grad_slot(&mut grads, *a);
                    Zip::from(ga).and(&gy).and(av).for_each(|g, &d, &x| {
                        if x > 0.0 {
                            *g += d;
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = self.grad_slot(&mut grads, *a);
                    Zip::from(ga).and(&gy).and(y).for_each(|g, &d, &s| *g += d * s * (1.0 - s));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = self.grad_slot(&mut grads, *a);
                    Zip::from(ga).and(&gy).and(y).for_each(|g, &d, &t| *g += d * (1.0 - t * t));
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    let ga = self.grad_slot(&mut grads, *a);
                    Zip::from(ga).and(&gy).and(av).for_each(|g, &d, &x| *g += 2.0 * d * x);
                }
                Op::Sum(a) => {
                    let d = gy[[0, 0]];
                    self.grad_slot(&mut grads, *a).mapv_inplace(|g| g + d);
                }
                Op::RowSum(a) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    for (mut row, &d) in ga.rows_mut().into_iter().zip(gy.iter()) {
                        row.mapv_inplace(|g| g + d);
                    }
                }
                Op::SliceRows(a, lo) => {
                    let n = gy.nrows();
                    let ga = self.grad_slot(&mut grads, *a);
                    let mut dst = ga.slice_mut(s![*lo..*lo + n, ..]);
                    dst += &gy;
                }
                Op::SliceCols(a, lo) => {
                    let n = gy.ncols();
                    let ga = self.grad_slot(&mut grads, *a);
                    let mut dst = ga.slice_mut(s![.., *lo..*lo + n]);
                    dst += &gy;
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).nrows();
                        if self.g(*p) {
                            let src = gy.slice(s![offset..offset + n, ..]);
                            *self.grad_slot(&mut grads, *p) += &src;
                        }
                        offset += n;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Array2<f64>>], v: Var) -> &'g mut Array2<f64> {
        grads[v.0].get_or_insert_with(|| Array2::zeros(self.nodes[v.0].value.dim()))
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf; zeros if the loss does not depend on it.
    pub fn of(&self, tape: &Tape, v: Var) -> Array2<f64> {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Array2::zeros(tape.shape(v)))
    }

    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
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
