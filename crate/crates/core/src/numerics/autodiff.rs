//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Graph`] records every intermediate value as it is computed (a tape);
//! [`Graph::backward`] walks the tape in reverse and accumulates adjoints.
//! Only first derivatives are supported.

use std::collections::BTreeMap;

use super::tensor::{Gradients, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Largest magnitude accepted by `exp` anywhere in the crate.
pub const EXP_CLAMP: f64 = 700.0;

/// `exp` with its argument clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
pub fn clamped_exp(x: f64) -> f64 {
    x.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + clamped_exp(-x))
    } else {
        let e = clamped_exp(x);
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise unary primitives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Abs,
    Square,
}

impl Unary {
    pub fn from_name(name: &str) -> Result<Unary> {
        Ok(match name {
            "sigmoid" => Unary::Sigmoid,
            "softplus" => Unary::Softplus,
            "exp" => Unary::Exp,
            "log" => Unary::Log,
            "abs" => Unary::Abs,
            "square" => Unary::Square,
            other => return Err(Error::UnsupportedPrimitive(other.to_string())),
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Exp => clamped_exp(x),
            Unary::Log => x.ln(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => sigmoid(x),
            Unary::Exp => {
                if x.abs() > EXP_CLAMP {
                    0.0
                } else {
                    y
                }
            }
            Unary::Log => 1.0 / x,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Right operand is same-shape, a `1 x c` row, or a `1 x 1` scalar.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Unary, Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

fn broadcast_kind(a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.same_shape(b) {
        Ok(Broadcast::Same)
    } else if b.rows() == 1 && b.cols() == a.cols() {
        Ok(Broadcast::Row)
    } else if b.len() == 1 {
        Ok(Broadcast::Scalar)
    } else {
        Err(Error::Shape(format!(
            "cannot broadcast {}x{} onto {}x{}",
            b.rows(),
            b.cols(),
            a.rows(),
            a.cols()
        )))
    }
}

fn broadcast_index(kind: Broadcast, i: usize, cols: usize) -> usize {
    match kind {
        Broadcast::Same => i,
        Broadcast::Row => i % cols,
        Broadcast::Scalar => 0,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input (no gradient is reported for it).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a named parameter leaf whose gradient `backward` reports.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{name}` bound twice"
            )));
        }
        let v = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Binds every tensor of `set` as a parameter leaf.
    pub fn bind(&mut self, set: &ParamSet) -> Result<BTreeMap<String, Var>> {
        let mut out = BTreeMap::new();
        for (name, t) in set.iter() {
            out.insert(name.clone(), self.param(name, t.clone())?);
        }
        Ok(out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let kind = broadcast_kind(ta, tb)?;
        let cols = ta.cols();
        let values = ta
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.values()[broadcast_index(kind, i, cols)]))
            .collect();
        Ok(Tensor::from_parts(ta.rows(), cols, values))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        self.push(value, Op::Offset(a))
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| op.apply(x));
        if let Some(index) = value.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(self.push(value, Op::Unary(op, a)))
    }

    /// Applies a unary primitive looked up by name.
    pub fn apply(&mut self, name: &str, a: Var) -> Result<Var> {
        let op = Unary::from_name(name)?;
        self.unary(op, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Unary::Softplus, a).expect("softplus is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a).expect("clamped exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Unary::Abs, a).expect("abs is total")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a).expect("square is total")
    }

    /// `x^exponent` for nonnegative inputs.
    pub fn powf(&mut self, a: Var, exponent: f64) -> Result<Var> {
        if self.value(a).values().iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument("powf of a negative value".into()));
        }
        let value = self.value(a).map(|x| x.powf(exponent));
        Ok(self.push(value, Op::Powf(a, exponent)))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::from_parts(1, 1, vec![self.value(a).sum()]);
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.len().max(1) as f64;
        let value = Tensor::from_parts(1, 1, vec![t.sum() / n]);
        self.push(value, Op::Mean(a))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::Empty("concat_cols")),
        };
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut values = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                values.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_parts(rows, total, values);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(Error::Shape(format!(
                "reshape {} values to {}x{}",
                t.len(),
                rows,
                cols
            )));
        }
        let value = Tensor::from_parts(rows, cols, t.values().to_vec());
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Adjoints of `output` (a `1 x 1` node) with respect to every node.
    fn adjoints(&self, output: Var) -> Result<Vec<Option<Tensor>>> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape("backward needs a scalar output".into()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::from_parts(1, 1, vec![1.0]));

        fn accumulate(slot: &mut Option<Tensor>, add: Tensor) {
            match slot {
                Some(t) => {
                    for (a, b) in t.values_mut().iter_mut().zip(add.values()) {
                        *a += b;
                    }
                }
                None => *slot = Some(add),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let ga = g.matmul(&tb.transpose())?;
                    let gb = ta.transpose().matmul(&g)?;
                    accumulate(&mut adj[a.0], ga);
                    accumulate(&mut adj[b.0], gb);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let tb = self.value(*b);
                    let kind = broadcast_kind(self.value(*a), tb)?;
                    let gb = reduce_broadcast(&g, kind, tb, |gi, _| sign * gi);
                    accumulate(&mut adj[b.0], gb);
                    accumulate(&mut adj[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let kind = broadcast_kind(ta, tb)?;
                    let cols = ta.cols();
                    let ga_vals = g
                        .values()
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| gi * tb.values()[broadcast_index(kind, i, cols)])
                        .collect();
                    let ga = Tensor::from_parts(ta.rows(), cols, ga_vals);
                    let gb = reduce_broadcast(&g, kind, tb, |gi, i| gi * ta.values()[i]);
                    accumulate(&mut adj[a.0], ga);
                    accumulate(&mut adj[b.0], gb);
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut adj[a.0], g.map(|x| x * f));
                }
                Op::Offset(a) => accumulate(&mut adj[a.0], g),
                Op::Unary(u, a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let vals = g
                        .values()
                        .iter()
                        .zip(x.values().iter().zip(y.values()))
                        .map(|(gi, (&xi, &yi))| gi * u.derivative(xi, yi))
                        .collect();
                    accumulate(&mut adj[a.0], Tensor::from_parts(x.rows(), x.cols(), vals));
                }
                Op::Powf(a, e) => {
                    let x = self.value(*a);
                    let vals = g
                        .values()
                        .iter()
                        .zip(x.values())
                        .map(|(gi, &xi)| {
                            if xi == 0.0 && *e < 1.0 {
                                0.0
                            } else {
                                gi * e * xi.powf(e - 1.0)
                            }
                        })
                        .collect();
                    accumulate(&mut adj[a.0], Tensor::from_parts(x.rows(), x.cols(), vals));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let vals = g
                        .values()
                        .iter()
                        .zip(x.values())
                        .map(|(gi, &xi)| if xi < *lo || xi > *hi { 0.0 } else { *gi })
                        .collect();
                    accumulate(&mut adj[a.0], Tensor::from_parts(x.rows(), x.cols(), vals));
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let x = self.value(*a);
                    let mut gi = g.item();
                    if matches!(node.op, Op::Mean(_)) {
                        gi /= x.len().max(1) as f64;
                    }
                    accumulate(&mut adj[a.0], Tensor::filled(x.rows(), x.cols(), gi));
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let rows = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        let mut vals = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            let start = r * total + offset;
                            vals.extend_from_slice(&g.values()[start..start + c]);
                        }
                        accumulate(&mut adj[p.0], Tensor::from_parts(rows, c, vals));
                        offset += c;
                    }
                }
                Op::Reshape(a) => {
                    let x = self.value(*a);
                    let reshaped = Tensor::from_parts(x.rows(), x.cols(), g.into_values());
                    accumulate(&mut adj[a.0], reshaped);
                }
            }
        }
        Ok(adj)
    }

    /// Gradients of scalar `output` for every bound parameter.
    ///
    /// Parameters the output does not depend on receive zero gradients.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let adj = self.adjoints(output)?;
        let mut grads = Gradients::new();
        for (name, v) in &self.params {
            let g = adj
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros_like(self.value(*v)));
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }
}

fn reduce_broadcast(
    g: &Tensor,
    kind: Broadcast,
    target: &Tensor,
    f: impl Fn(f64, usize) -> f64,
) -> Tensor {
    let cols = g.cols();
    match kind {
        Broadcast::Same => {
            let vals = g.values().iter().enumerate().map(|(i, &gi)| f(gi, i)).collect();
            Tensor::from_parts(target.rows(), target.cols(), vals)
        }
        Broadcast::Row => {
            let mut vals = vec![0.0; cols];
            for (i, &gi) in g.values().iter().enumerate() {
                vals[i % cols] += f(gi, i);
            }
            Tensor::from_parts(1, cols, vals)
        }
        Broadcast::Scalar => {
            let s = g.values().iter().enumerate().map(|(i, &gi)| f(gi, i)).sum();
            Tensor::from_parts(target.rows(), target.cols(), vec![s])
        }
    }
}

/// Evaluates `loss_fn` on a fresh graph with every tensor of each set in
/// `params` bound by name, and returns the loss with its gradients.
pub fn grad<F>(params: &[&ParamSet], loss_fn: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut graph = Graph::new();
    let mut bound = BTreeMap::new();
    for set in params {
        bound.extend(graph.bind(set)?);
    }
    let out = loss_fn(&mut graph, &bound)?;
    let loss = graph.value(out).item();
    let grads = graph.backward(out)?;
    Ok((loss, grads))
}
