//! Define-by-run reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] is built fresh for every forward pass. Each op appends a node
//! holding its output value and the indices of its inputs; [`Tape::backward`]
//! walks the nodes in reverse order and accumulates gradients into the
//! [`ParamStore`] entries that were loaded with [`Tape::param`].

use std::f64::consts::PI;

use super::{Matrix, ParamId, ParamStore};
use crate::error::{DosaError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x + row`, with `row` a 1×c vector broadcast over rows.
    AddRow(Var, Var),
    /// `x - row`, broadcast as in `AddRow`.
    SubRow(Var, Var),
    /// `k * x` where `k` is 1×1.
    ScaleBy(Var, Var),
    /// `a * x + c` with constant `a`, `c`.
    Affine(Var, f64),
    Neg(Var),
    Square(Var),
    Tanh(Var),
    Exp(Var),
    Sigmoid(Var),
    ClampMin(Var, f64),
    ClampMax(Var, f64),
    StopGradient,
    Sum(Var),
    RowSum(Var),
    /// Heaviside forward, arctangent surrogate backward.
    Spike(Var, f64),
    /// Arctangent sigmoid forward (the surrogate's primitive).
    SmoothSpike(Var, f64),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Derivative of the arctangent surrogate: `(α/2) / (1 + (π α x / 2)²)`.
pub fn atan_surrogate_grad(x: f64, alpha: f64) -> f64 {
    let z = PI * alpha * x / 2.0;
    (alpha / 2.0) / (1.0 + z * z)
}

/// Primitive of [`atan_surrogate_grad`]: `atan(π α x / 2) / π + 1/2`.
pub fn atan_surrogate(x: f64, alpha: f64) -> f64 {
    (PI * alpha * x / 2.0).atan() / PI + 0.5
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

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let m = self.value(v);
        if m.shape() != (1, 1) {
            return Err(DosaError::NotScalar {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        Ok(m.get(0, 0))
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    fn broadcast_row(&self, x: Var, row: Var, sign: f64, op: &'static str) -> Result<Matrix> {
        let (xm, rm) = (self.value(x), self.value(row));
        if rm.rows() != 1 || rm.cols() != xm.cols() {
            return Err(DosaError::Dimension {
                op,
                left: xm.shape(),
                right: rm.shape(),
            });
        }
        Ok(Matrix::from_fn(xm.rows(), xm.cols(), |r, c| {
            xm.get(r, c) + sign * rm.get(0, c)
        }))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let v = self.broadcast_row(x, row, 1.0, "add_row")?;
        Ok(self.push(Op::AddRow(x, row), v))
    }

    pub fn sub_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let v = self.broadcast_row(x, row, -1.0, "sub_row")?;
        Ok(self.push(Op::SubRow(x, row), v))
    }

    pub fn scale_by(&mut self, k: Var, x: Var) -> Result<Var> {
        let km = self.value(k);
        if km.shape() != (1, 1) {
            return Err(DosaError::Dimension {
                op: "scale_by",
                left: km.shape(),
                right: (1, 1),
            });
        }
        let kv = km.get(0, 0);
        let v = self.value(x).map(|e| kv * e);
        Ok(self.push(Op::ScaleBy(k, x), v))
    }

    /// `a * x + c` for constants `a` and `c`.
    pub fn affine(&mut self, x: Var, a: f64, c: f64) -> Var {
        let v = self.value(x).map(|e| a * e + c);
        self.push(Op::Affine(x, a), v)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| -e);
        self.push(Op::Neg(x), v)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * e);
        self.push(Op::Square(x), v)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    /// `max(x, c)`; gradient is zero where `x < c`.
    pub fn clamp_min(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|e| e.max(c));
        self.push(Op::ClampMin(x, c), v)
    }

    /// `min(x, c)`; gradient is zero where `x > c`.
    pub fn clamp_max(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|e| e.min(c));
        self.push(Op::ClampMax(x, c), v)
    }

    /// Identity in the forward pass, contributes nothing backward.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.push(Op::StopGradient, v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Matrix::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    /// Per-row sums, n×c → n×1.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let v = Matrix::from_fn(xm.rows(), 1, |r, _| xm.row(r).iter().sum());
        self.push(Op::RowSum(x), v)
    }

    /// Spike generation: `1` where `x >= 0`, else `0`. Backward uses the
    /// arctangent surrogate derivative with width `alpha`.
    pub fn spike(&mut self, x: Var, alpha: f64) -> Var {
        let v = self.value(x).map(|e| if e >= 0.0 { 1.0 } else { 0.0 });
        self.push(Op::Spike(x, alpha), v)
    }

    /// Smooth stand-in for [`Tape::spike`] whose exact derivative is the surrogate.
    pub fn smooth_spike(&mut self, x: Var, alpha: f64) -> Var {
        let v = self.value(x).map(|e| atan_surrogate(e, alpha));
        self.push(Op::SmoothSpike(x, alpha), v)
    }

    /// Reverse sweep from a 1×1 output. Gradients are added to every
    /// trainable parameter that was loaded onto this tape.
    pub fn backward(&self, output: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(output)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                let p = store.get_mut(*id);
                if p.trainable {
                    p.accumulate(&g)?;
                }
            }
        }
        Ok(())
    }

    /// Gradient of `output` with respect to each leaf (constant or parameter)
    /// node. Interior entries are consumed during the sweep and left `None`.
    pub fn gradients(&self, output: Var) -> Result<Vec<Option<Matrix>>> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(DosaError::NotScalar {
                rows: out.rows(),
                cols: out.cols(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param(_) | Op::StopGradient => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let am = self.value(*a);
                    let bm = self.value(*b);
                    let ga = g.matmul(&bm.transpose())?;
                    let gb = am.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|e| -e))?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), "mul_grad", |x, y| x * y)?;
                    let gb = g.zip_map(self.value(*a), "mul_grad", |x, y| x * y)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::AddRow(x, row) | Op::SubRow(x, row) => {
                    let sign = if matches!(node.op, Op::AddRow(..)) { 1.0 } else { -1.0 };
                    let gr = Matrix::from_fn(1, g.cols(), |_, c| {
                        sign * (0..g.rows()).map(|r| g.get(r, c)).sum::<f64>()
                    });
                    accumulate(&mut grads, *row, gr)?;
                    accumulate(&mut grads, *x, g)?;
                }
                Op::ScaleBy(k, x) => {
                    let kv = self.value(*k).get(0, 0);
                    let gk = g
                        .as_slice()
                        .iter()
                        .zip(self.value(*x).as_slice())
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                    accumulate(&mut grads, *k, Matrix::scalar(gk))?;
                    accumulate(&mut grads, *x, g.map(|e| kv * e))?;
                }
                Op::Affine(x, a) => {
                    let a = *a;
                    accumulate(&mut grads, *x, g.map(|e| a * e))?;
                }
                Op::Neg(x) => accumulate(&mut grads, *x, g.map(|e| -e))?,
                Op::Square(x) => {
                    let gx = g.zip_map(self.value(*x), "square_grad", |g, x| 2.0 * x * g)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(&node.value, "tanh_grad", |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Exp(x) => {
                    let gx = g.zip_map(&node.value, "exp_grad", |g, y| g * y)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(&node.value, "sigmoid_grad", |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::ClampMin(x, c) => {
                    let c = *c;
                    let gx = g.zip_map(self.value(*x), "clamp_grad", |g, x| {
                        if x < c {
                            0.0
                        } else {
                            g
                        }
                    })?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::ClampMax(x, c) => {
                    let c = *c;
                    let gx = g.zip_map(self.value(*x), "clamp_grad", |g, x| {
                        if x > c {
                            0.0
                        } else {
                            g
                        }
                    })?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Matrix::filled(r, c, g.get(0, 0)))?;
                }
                Op::RowSum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Matrix::from_fn(r, c, |i, _| g.get(i, 0)))?;
                }
                Op::Spike(x, alpha) | Op::SmoothSpike(x, alpha) => {
                    let alpha = *alpha;
                    let gx = g.zip_map(self.value(*x), "spike_grad", |g, x| {
                        g * atan_surrogate_grad(x, alpha)
                    })?;
                    accumulate(&mut grads, *x, gx)?;
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
