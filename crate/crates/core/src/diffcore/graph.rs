//! Tape of dense operations with a reverse sweep.
//!
//! A [`Graph`] is built fresh for every episode. Parameters enter as leaves
//! through [`Graph::param`]; each operation appends a node and returns a
//! [`Var`] handle. [`Graph::backward`] walks the tape once in reverse and
//! accumulates parameter gradients into the [`ParameterStore`].

use std::collections::HashMap;

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::ShapeError;

/// Floor applied inside [`Graph::log`] so vanishing probabilities stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    ScaleBy(Var, Var),
    Concat(Vec<Var>),
    Mean(Vec<Var>),
    Sum(Var),
    Dot(Var, Var),
    Pick(Var, usize),
    Rows(Var, usize),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), ShapeError> {
    if a.shape() != b.shape() {
        return Err(ShapeError::Mismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn expect_column(op: &'static str, t: &Tensor) -> Result<(), ShapeError> {
    if t.cols() != 1 || t.rows() == 0 {
        return Err(ShapeError::Unexpected {
            op,
            expected: "non-empty column vector",
            got: t.shape(),
        });
    }
    Ok(())
}

fn expect_scalar(op: &'static str, t: &Tensor) -> Result<(), ShapeError> {
    if t.shape() != (1, 1) {
        return Err(ShapeError::Unexpected {
            op,
            expected: "1x1 scalar",
            got: t.shape(),
        });
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Max-shifted softmax over a slice.
pub fn softmax_values(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn column(&mut self, values: &[f64]) -> Var {
        self.constant(Tensor::column(values.to_vec()))
    }

    /// Leaf for a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var, ShapeError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| ShapeError::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Param, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, ShapeError> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op_name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.rows(), ta.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        let rg = self.rg(a);
        self.push(value, Op::Offset(a), rg)
    }

    /// Multiplies every element of `a` by the `1 × 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, ShapeError> {
        expect_scalar("scale_by", self.value(s))?;
        let k = self.scalar_value(s);
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(value, Op::ScaleBy(a, s), rg))
    }

    /// Stacks column vectors vertically.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            expect_column("concat", t)?;
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::column(data), Op::Concat(parts.to_vec()), rg))
    }

    /// Elementwise mean of equally shaped tensors.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let first = parts.first().ok_or(ShapeError::Unexpected {
            op: "mean",
            expected: "at least one input",
            got: (0, 0),
        })?;
        let mut acc = self.value(*first).clone();
        for &p in &parts[1..] {
            same_shape("mean", &acc, self.value(p))?;
            acc.add_assign(self.value(p));
        }
        let n = parts.len() as f64;
        let value = acc.map(|x| x / n);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Mean(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("dot", ta, tb)?;
        let total: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(total), Op::Dot(a, b), rg))
    }

    /// Element `index` (row-major) as a `1 × 1` node.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, ShapeError> {
        let t = self.value(a);
        if index >= t.len() {
            return Err(ShapeError::Unexpected {
                op: "pick",
                expected: "index within tensor",
                got: t.shape(),
            });
        }
        let v = t.data()[index];
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, index), rg))
    }

    /// The first `count` rows of `a`.
    pub fn rows(&mut self, a: Var, count: usize) -> Result<Var, ShapeError> {
        let t = self.value(a);
        if count == 0 || count > t.rows() {
            return Err(ShapeError::Unexpected {
                op: "rows",
                expected: "1 <= count <= rows",
                got: t.shape(),
            });
        }
        let cols = t.cols();
        let value = Tensor::new(count, cols, t.data()[..count * cols].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Rows(a, count), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    /// Natural log with inputs floored at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(LOG_FLOOR).ln());
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    /// Softmax over all elements of a column vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var, ShapeError> {
        let t = self.value(a);
        expect_column("softmax", t)?;
        let value = Tensor::column(softmax_values(t.data()));
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    /// Scaled dot-product attention for a single query.
    ///
    /// `query` is `d × 1`, `keys` is `n × d`, `values` is `n × d_v`; the
    /// result is the `d_v × 1` column `Vᵀ softmax(K q / √d)`.
    pub fn attention(&mut self, query: Var, keys: Var, values: Var) -> Result<Var, ShapeError> {
        let (d, kq) = (self.value(query).rows(), self.value(keys).shape());
        expect_column("attention", self.value(query))?;
        if kq.1 != d || self.value(values).rows() != kq.0 {
            return Err(ShapeError::Mismatch {
                op: "attention",
                lhs: kq,
                rhs: self.value(values).shape(),
            });
        }
        let scores = self.matmul(keys, query)?;
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt());
        let weights = self.softmax(scaled)?;
        let vt = self.transpose(values);
        self.matmul(vt, weights)
    }

    /// Reverse sweep from a scalar `loss`; parameter gradients are added to
    /// `store`. The tape is consumed.
    pub fn backward(self, loss: Var, store: &mut ParameterStore) -> Result<(), ShapeError> {
        let grads = self.gradients(loss)?;
        for (name, v) in &self.params {
            if let Some(g) = &grads[v.0] {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// Adjoint of every node with respect to `loss`.
    pub(crate) fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor>>, ShapeError> {
        expect_scalar("backward", self.value(loss))?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Constant | Op::Param) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let send = |grads: &mut Vec<Option<Tensor>>, to: Var, delta: Tensor| {
                if !self.nodes[to.0].requires_grad {
                    return;
                }
                match &mut grads[to.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        send(&mut grads, *a, g.matmul(&tb.transpose())?);
                    }
                    if self.rg(*b) {
                        send(&mut grads, *b, ta.transpose().matmul(&g)?);
                    }
                }
                Op::Transpose(a) => send(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *b, g.map(|x| -x));
                    send(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    send(&mut grads, *a, zip_with(&g, tb, |x, y| x * y));
                    send(&mut grads, *b, zip_with(&g, ta, |x, y| x * y));
                }
                Op::Scale(a, k) => send(&mut grads, *a, g.map(|x| x * k)),
                Op::Offset(a) => send(&mut grads, *a, g),
                Op::ScaleBy(a, s) => {
                    let k = self.scalar_value(*s);
                    let ta = self.value(*a);
                    let ds: f64 = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).sum();
                    send(&mut grads, *s, Tensor::scalar(ds));
                    send(&mut grads, *a, g.map(|x| x * k));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).rows();
                        let slice = g.data()[offset..offset + n].to_vec();
                        send(&mut grads, *p, Tensor::column(slice));
                        offset += n;
                    }
                }
                Op::Mean(parts) => {
                    let n = parts.len() as f64;
                    let share = g.map(|x| x / n);
                    for p in parts {
                        send(&mut grads, *p, share.clone());
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    send(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::Dot(a, b) => {
                    let k = g.item();
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    send(&mut grads, *a, tb.map(|x| x * k));
                    send(&mut grads, *b, ta.map(|x| x * k));
                }
                Op::Pick(a, index) => {
                    let (r, c) = self.value(*a).shape();
                    let mut t = Tensor::zeros(r, c);
                    t.data_mut()[*index] = g.item();
                    send(&mut grads, *a, t);
                }
                Op::Rows(a, count) => {
                    let (r, c) = self.value(*a).shape();
                    let mut t = Tensor::zeros(r, c);
                    t.data_mut()[..count * c].copy_from_slice(g.data());
                    send(&mut grads, *a, t);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(&mut grads, *a, zip_with(&g, y, |d, s| d * s * (1.0 - s)));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    send(&mut grads, *a, zip_with(&g, x, |d, v| if v > 0.0 { d } else { 0.0 }));
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    send(&mut grads, *a, zip_with(&g, x, |d, v| d * sigmoid(v)));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    send(&mut grads, *a, zip_with(&g, y, |d, e| d * e));
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    send(
                        &mut grads,
                        *a,
                        zip_with(&g, x, |d, v| if v > LOG_FLOOR { d / v } else { 0.0 }),
                    );
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let inner: f64 = g.data().iter().zip(y.data()).map(|(d, s)| d * s).sum();
                    send(&mut grads, *a, zip_with(&g, y, |d, s| s * (d - inner)));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let (lo, hi) = (*lo, *hi);
                    send(
                        &mut grads,
                        *a,
                        zip_with(&g, x, |d, v| if v >= lo && v <= hi { d } else { 0.0 }),
                    );
                }
            }
        }
        Ok(grads)
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes checked on the forward pass")
}
