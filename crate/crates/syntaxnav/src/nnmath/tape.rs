//! Reverse-mode differentiation over a recorded tape of tensor primitives.
//!
//! Every primitive application appends one node holding its output value;
//! the backward pass walks nodes in exact reverse recording order and sums
//! gradient contributions over shared uses, so identical tapes produce
//! bit-identical gradients.

use std::collections::BTreeMap;

use super::tensor::{log_softmax, softmax, Tensor};
use super::{MathError, ParameterSet};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Add(usize, usize),
    AddN(Vec<usize>),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatVec(usize, usize),
    MatTVec(usize, usize),
    Dot(usize, usize),
    Concat(usize, usize),
    Slice { a: usize, start: usize, len: usize },
    Row { m: usize, row: usize },
    StackRows(Vec<usize>),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Softmax(usize),
    LogSoftmax(usize),
    SumVec(usize),
    Index { v: usize, index: usize },
}

struct Node {
    value: Tensor,
    op: Option<Op>,
    is_param: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: Vec<(String, usize)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a rank-0 node.
    pub fn scalar(&self, id: ValId) -> Result<f64, MathError> {
        self.nodes[id.0].value.as_scalar()
    }

    fn push(&mut self, value: Tensor, op: Option<Op>, is_param: bool) -> ValId {
        self.nodes.push(Node {
            value,
            op,
            is_param,
        });
        ValId(self.nodes.len() - 1)
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> ValId {
        self.push(value, None, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> ValId {
        self.constant(Tensor::scalar(v))
    }

    pub fn constant_vector(&mut self, v: Vec<f64>) -> ValId {
        self.constant(Tensor::vector(v))
    }

    /// Leases a named parameter onto the tape as a differentiable leaf.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<ValId, MathError> {
        let p = params.get(name).ok_or_else(|| MathError::UnknownParameter {
            name: name.to_string(),
        })?;
        let id = self.push(p.value.clone(), None, true);
        self.param_leaves.push((name.to_string(), id.0));
        Ok(id)
    }

    fn same_shape(&self, a: ValId, b: ValId, what: &str) -> Result<(), MathError> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(MathError::ShapeMismatch {
                context: format!("{what}: {sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: ValId, b: ValId) -> Result<ValId, MathError> {
        self.same_shape(a, b, "add")?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, data).unwrap_or_else(|_| unreachable!()),
            Some(Op::Add(a.0, b.0)),
            false,
        ))
    }

    /// Sum of any number of same-shape values, accumulated left to right.
    pub fn add_n(&mut self, xs: &[ValId]) -> Result<ValId, MathError> {
        if xs.is_empty() {
            return Err(MathError::EmptyInput);
        }
        for x in &xs[1..] {
            self.same_shape(xs[0], *x, "add_n")?;
        }
        let mut data = self.nodes[xs[0].0].value.data().to_vec();
        for x in &xs[1..] {
            for (d, v) in data.iter_mut().zip(self.nodes[x.0].value.data()) {
                *d += v;
            }
        }
        let shape = self.nodes[xs[0].0].value.shape().to_vec();
        let ids = xs.iter().map(|v| v.0).collect();
        Ok(self.push(Tensor::new(shape, data).unwrap(), Some(Op::AddN(ids)), false))
    }

    pub fn sub(&mut self, a: ValId, b: ValId) -> Result<ValId, MathError> {
        self.same_shape(a, b, "sub")?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data).unwrap(), Some(Op::Sub(a.0, b.0)), false))
    }

    pub fn mul(&mut self, a: ValId, b: ValId) -> Result<ValId, MathError> {
        self.same_shape(a, b, "mul")?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data).unwrap(), Some(Op::Mul(a.0, b.0)), false))
    }

    pub fn scale(&mut self, a: ValId, k: f64) -> ValId {
        let data = self.nodes[a.0].value.data().iter().map(|x| k * x).collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Some(Op::Scale(a.0, k)), false)
    }

    /// y = M x.
    pub fn matvec(&mut self, m: ValId, x: ValId) -> Result<ValId, MathError> {
        let mt = &self.nodes[m.0].value;
        let xt = &self.nodes[x.0].value;
        if mt.shape().len() != 2 || xt.shape().len() != 1 || mt.cols() != xt.len() {
            return Err(MathError::ShapeMismatch {
                context: format!("matvec: {:?} x {:?}", mt.shape(), xt.shape()),
            });
        }
        let out = Tensor::vector(mt.matvec(xt));
        Ok(self.push(out, Some(Op::MatVec(m.0, x.0)), false))
    }

    /// y = M^T x.
    pub fn matvec_t(&mut self, m: ValId, x: ValId) -> Result<ValId, MathError> {
        let mt = &self.nodes[m.0].value;
        let xt = &self.nodes[x.0].value;
        if mt.shape().len() != 2 || xt.shape().len() != 1 || mt.rows() != xt.len() {
            return Err(MathError::ShapeMismatch {
                context: format!("matvec_t: {:?}^T x {:?}", mt.shape(), xt.shape()),
            });
        }
        let out = Tensor::vector(mt.matvec_t(xt));
        Ok(self.push(out, Some(Op::MatTVec(m.0, x.0)), false))
    }

    pub fn dot(&mut self, a: ValId, b: ValId) -> Result<ValId, MathError> {
        self.same_shape(a, b, "dot")?;
        let v: f64 = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(v), Some(Op::Dot(a.0, b.0)), false))
    }

    pub fn concat(&mut self, a: ValId, b: ValId) -> Result<ValId, MathError> {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if at.shape().len() != 1 || bt.shape().len() != 1 {
            return Err(MathError::ShapeMismatch {
                context: format!("concat: {:?} ++ {:?}", at.shape(), bt.shape()),
            });
        }
        let mut data = at.data().to_vec();
        data.extend_from_slice(bt.data());
        Ok(self.push(Tensor::vector(data), Some(Op::Concat(a.0, b.0)), false))
    }

    pub fn slice(&mut self, a: ValId, start: usize, len: usize) -> Result<ValId, MathError> {
        let at = &self.nodes[a.0].value;
        if at.shape().len() != 1 || start + len > at.len() {
            return Err(MathError::ShapeMismatch {
                context: format!("slice [{start}, {start}+{len}) of {:?}", at.shape()),
            });
        }
        let data = at.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Some(Op::Slice { a: a.0, start, len }), false))
    }

    /// Row `row` of a matrix, as a vector. The embedding lookup.
    pub fn row(&mut self, m: ValId, row: usize) -> Result<ValId, MathError> {
        let mt = &self.nodes[m.0].value;
        if mt.shape().len() != 2 {
            return Err(MathError::ShapeMismatch {
                context: format!("row of {:?}", mt.shape()),
            });
        }
        if row >= mt.rows() {
            return Err(MathError::IndexOutOfRange {
                index: row,
                len: mt.rows(),
            });
        }
        let c = mt.cols();
        let data = mt.data()[row * c..(row + 1) * c].to_vec();
        Ok(self.push(Tensor::vector(data), Some(Op::Row { m: m.0, row }), false))
    }

    /// Stacks equal-length vectors into an [n, d] matrix.
    pub fn stack_rows(&mut self, rows: &[ValId]) -> Result<ValId, MathError> {
        if rows.is_empty() {
            return Err(MathError::EmptyInput);
        }
        let d = self.nodes[rows[0].0].value.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let rt = &self.nodes[r.0].value;
            if rt.shape().len() != 1 || rt.len() != d {
                return Err(MathError::ShapeMismatch {
                    context: format!("stack_rows: expected [{d}], got {:?}", rt.shape()),
                });
            }
            data.extend_from_slice(rt.data());
        }
        let ids = rows.iter().map(|v| v.0).collect();
        Ok(self.push(
            Tensor::matrix(rows.len(), d, data).unwrap(),
            Some(Op::StackRows(ids)),
            false,
        ))
    }

    fn unary(&mut self, a: ValId, f: impl Fn(f64) -> f64, op: Op) -> ValId {
        let data = self.nodes[a.0].value.data().iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Some(op), false)
    }

    pub fn sigmoid(&mut self, a: ValId) -> ValId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: ValId) -> ValId {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: ValId) -> ValId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: ValId) -> ValId {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: ValId) -> ValId {
        self.unary(a, f64::ln, Op::Ln(a.0))
    }

    pub fn softmax(&mut self, a: ValId) -> Result<ValId, MathError> {
        let at = &self.nodes[a.0].value;
        if at.shape().len() != 1 {
            return Err(MathError::ShapeMismatch {
                context: format!("softmax of {:?}", at.shape()),
            });
        }
        let out = Tensor::vector(softmax(at.data())?);
        Ok(self.push(out, Some(Op::Softmax(a.0)), false))
    }

    pub fn log_softmax(&mut self, a: ValId) -> Result<ValId, MathError> {
        let at = &self.nodes[a.0].value;
        if at.shape().len() != 1 {
            return Err(MathError::ShapeMismatch {
                context: format!("log_softmax of {:?}", at.shape()),
            });
        }
        let out = Tensor::vector(log_softmax(at.data())?);
        Ok(self.push(out, Some(Op::LogSoftmax(a.0)), false))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_vec(&mut self, a: ValId) -> ValId {
        let v: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(v), Some(Op::SumVec(a.0)), false)
    }

    /// Element `index` of a vector, as a scalar.
    pub fn index(&mut self, v: ValId, index: usize) -> Result<ValId, MathError> {
        let vt = &self.nodes[v.0].value;
        if index >= vt.len() {
            return Err(MathError::IndexOutOfRange {
                index,
                len: vt.len(),
            });
        }
        let val = vt.data()[index];
        Ok(self.push(Tensor::scalar(val), Some(Op::Index { v: v.0, index }), false))
    }

    /// Backpropagates from a scalar loss with seed gradient 1.
    pub fn backward(&self, loss: ValId) -> Result<Gradients, MathError> {
        self.backward_scaled(loss, 1.0)
    }

    /// Backpropagates with an arbitrary seed gradient, e.g. a batch weight.
    pub fn backward_scaled(&self, loss: ValId, seed: f64) -> Result<Gradients, MathError> {
        let node = &self.nodes[loss.0];
        if !node.value.is_scalar() {
            return Err(MathError::NotScalar {
                shape: node.value.shape().to_vec(),
            });
        }
        if node.op.is_none() && !node.is_param {
            return Err(MathError::DetachedLoss);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(seed));

        for i in (0..=loss.0).rev() {
            let Some(go) = grads[i].take() else { continue };
            if let Some(op) = &self.nodes[i].op {
                self.propagate(i, op, &go, &mut grads);
            }
            grads[i] = Some(go);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], id: usize, delta: impl FnOnce(&mut Tensor)) {
        let slot = grads[id].get_or_insert_with(|| Tensor::zeros_like(&self.nodes[id].value));
        delta(slot);
    }

    fn propagate(&self, out: usize, op: &Op, go: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Add(a, b) => {
                self.accum(grads, *a, |g| g.add_scaled(go.data(), 1.0));
                self.accum(grads, *b, |g| g.add_scaled(go.data(), 1.0));
            }
            Op::AddN(xs) => {
                for x in xs {
                    self.accum(grads, *x, |g| g.add_scaled(go.data(), 1.0));
                }
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, |g| g.add_scaled(go.data(), 1.0));
                self.accum(grads, *b, |g| g.add_scaled(go.data(), -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                self.accum(grads, *a, |g| {
                    for ((g, go), b) in g.data_mut().iter_mut().zip(go.data()).zip(bv) {
                        *g += go * b;
                    }
                });
                self.accum(grads, *b, |g| {
                    for ((g, go), a) in g.data_mut().iter_mut().zip(go.data()).zip(av) {
                        *g += go * a;
                    }
                });
            }
            Op::Scale(a, k) => {
                self.accum(grads, *a, |g| g.add_scaled(go.data(), *k));
            }
            Op::MatVec(m, x) => {
                let mv = &self.nodes[*m].value;
                let xv = &self.nodes[*x].value;
                self.accum(grads, *m, |g| g.add_outer(go.data(), xv.data(), 1.0));
                let dx = mv.matvec_t(go);
                self.accum(grads, *x, |g| g.add_scaled(&dx, 1.0));
            }
            Op::MatTVec(m, x) => {
                let mv = &self.nodes[*m].value;
                let xv = &self.nodes[*x].value;
                self.accum(grads, *m, |g| g.add_outer(xv.data(), go.data(), 1.0));
                let dx = mv.matvec(go);
                self.accum(grads, *x, |g| g.add_scaled(&dx, 1.0));
            }
            Op::Dot(a, b) => {
                let s = go.data()[0];
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                self.accum(grads, *a, |g| g.add_scaled(bv, s));
                self.accum(grads, *b, |g| g.add_scaled(av, s));
            }
            Op::Concat(a, b) => {
                let na = self.nodes[*a].value.len();
                self.accum(grads, *a, |g| g.add_scaled(&go.data()[..na], 1.0));
                self.accum(grads, *b, |g| g.add_scaled(&go.data()[na..], 1.0));
            }
            Op::Slice { a, start, len } => {
                self.accum(grads, *a, |g| {
                    for (gd, god) in g.data_mut()[*start..start + len].iter_mut().zip(go.data()) {
                        *gd += god;
                    }
                });
            }
            Op::Row { m, row } => {
                let c = self.nodes[*m].value.cols();
                self.accum(grads, *m, |g| {
                    for (gd, god) in g.data_mut()[row * c..(row + 1) * c].iter_mut().zip(go.data()) {
                        *gd += god;
                    }
                });
            }
            Op::StackRows(xs) => {
                let d = self.nodes[xs[0]].value.len();
                for (i, x) in xs.iter().enumerate() {
                    self.accum(grads, *x, |g| g.add_scaled(&go.data()[i * d..(i + 1) * d], 1.0));
                }
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[out].value;
                self.accum(grads, *a, |g| {
                    for ((g, go), y) in g.data_mut().iter_mut().zip(go.data()).zip(y.data()) {
                        *g += go * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &self.nodes[out].value;
                self.accum(grads, *a, |g| {
                    for ((g, go), y) in g.data_mut().iter_mut().zip(go.data()).zip(y.data()) {
                        *g += go * (1.0 - y * y);
                    }
                });
            }
            Op::Relu(a) => {
                let xv = self.nodes[*a].value.data();
                self.accum(grads, *a, |g| {
                    for ((g, go), x) in g.data_mut().iter_mut().zip(go.data()).zip(xv) {
                        if *x > 0.0 {
                            *g += go;
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let y = &self.nodes[out].value;
                self.accum(grads, *a, |g| {
                    for ((g, go), y) in g.data_mut().iter_mut().zip(go.data()).zip(y.data()) {
                        *g += go * y;
                    }
                });
            }
            Op::Ln(a) => {
                let xv = self.nodes[*a].value.data();
                self.accum(grads, *a, |g| {
                    for ((g, go), x) in g.data_mut().iter_mut().zip(go.data()).zip(xv) {
                        *g += go / x;
                    }
                });
            }
            Op::Softmax(a) => {
                let p = self.nodes[out].value.data();
                let dot: f64 = p.iter().zip(go.data()).map(|(p, g)| p * g).sum();
                self.accum(grads, *a, |g| {
                    for ((g, go), p) in g.data_mut().iter_mut().zip(go.data()).zip(p) {
                        *g += p * (go - dot);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = self.nodes[out].value.data();
                let gsum: f64 = go.data().iter().sum();
                self.accum(grads, *a, |g| {
                    for ((g, go), y) in g.data_mut().iter_mut().zip(go.data()).zip(y) {
                        *g += go - y.exp() * gsum;
                    }
                });
            }
            Op::SumVec(a) => {
                let s = go.data()[0];
                self.accum(grads, *a, |g| {
                    for gd in g.data_mut() {
                        *gd += s;
                    }
                });
            }
            Op::Index { v, index } => {
                let s = go.data()[0];
                self.accum(grads, *v, |g| g.data_mut()[*index] += s);
            }
        }
    }

    pub(crate) fn param_leaves(&self) -> &[(String, usize)] {
        &self.param_leaves
    }
}

/// Gradients from one backward pass. Nodes off the loss path read as zero.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn wrt(&self, id: ValId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    /// Gradients per registered parameter name, summed over all leases of
    /// the same name; parameters never touched by the loss map to zeros.
    pub fn param_grads(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, idx) in tape.param_leaves() {
            let g = match &self.grads[*idx] {
                Some(g) => g.clone(),
                None => Tensor::zeros(&self.shapes[*idx]),
            };
            match out.get_mut(name) {
                Some(acc) => acc.add_scaled(g.data(), 1.0),
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        out
    }
}
