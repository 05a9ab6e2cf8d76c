//! Record-on-forward tape with a single reverse sweep.
//!
//! Every op appends one node holding its forward value; `backward` walks the
//! tape once in reverse, so each recorded op is visited exactly once. A `Var`
//! is an index into the tape of the graph that created it and is rejected by
//! any other graph.

use super::num;
use super::tensor::{numel_of, reduce_to_shape, Tensor};
use crate::error::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering};

static GRAPH_IDS: AtomicU64 = AtomicU64::new(1);

/// Handle to a node in one specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Relu,
    Softplus,
    Exp,
    Log,
    Square,
    Sqrt,
    Sigmoid,
    NormalCdf,
    RoundSte,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary { kind: BinKind, lhs: usize, rhs: usize },
    Matmul { lhs: usize, rhs: usize },
    Affine { x: usize, w: usize, b: usize },
    Unary { kind: UnaryKind, input: usize },
    Scale { input: usize, factor: f64 },
    Shift { input: usize },
    ReduceSum { input: usize },
    ReduceMean { input: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Broadcast { input: usize },
    Reshape { input: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: GRAPH_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn consumed(&self) -> bool {
        self.consumed
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::GraphMismatch);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Insert a leaf. Trainable parameters pass `requires_grad = true`;
    /// frozen parameters and plain data pass `false` and are skipped by
    /// gradient accumulation.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        value.validate_finite("leaf")?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.leaf(Tensor::scalar(v), false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.check(v)?].value)
    }

    pub fn shape_of(&self, v: Var) -> Result<&[usize]> {
        Ok(self.nodes[self.check(v)?].value.shape())
    }

    fn requires(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = {
            let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
            match kind {
                BinKind::Add => va.add(vb)?,
                BinKind::Sub => va.sub(vb)?,
                BinKind::Mul => va.mul(vb)?,
                BinKind::Div => va.div(vb)?,
            }
        };
        let rg = self.requires(ia) || self.requires(ib);
        Ok(self.push(out, Op::Binary { kind, lhs: ia, rhs: ib }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let rg = self.requires(ia) || self.requires(ib);
        Ok(self.push(out, Op::Matmul { lhs: ia, rhs: ib }, rg))
    }

    /// x W + b with b broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ix, iw, ib) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let out = self.nodes[ix]
            .value
            .affine(&self.nodes[iw].value, &self.nodes[ib].value)?;
        let rg = self.requires(ix) || self.requires(iw) || self.requires(ib);
        Ok(self.push(out, Op::Affine { x: ix, w: iw, b: ib }, rg))
    }

    fn unary(&mut self, kind: UnaryKind, v: Var) -> Result<Var> {
        let idx = self.check(v)?;
        let input = &self.nodes[idx].value;
        let out = match kind {
            UnaryKind::Relu => input.map(|x| x.max(0.0)),
            UnaryKind::Softplus => input.map(num::softplus),
            UnaryKind::Exp => input.map(f64::exp),
            UnaryKind::Log => {
                if input.data().iter().any(|&x| x <= 0.0) {
                    return Err(Error::non_finite("log of nonpositive value"));
                }
                input.map(f64::ln)
            }
            UnaryKind::Square => input.map(|x| x * x),
            UnaryKind::Sqrt => {
                if input.data().iter().any(|&x| x < 0.0) {
                    return Err(Error::non_finite("sqrt of negative value"));
                }
                input.map(f64::sqrt)
            }
            UnaryKind::Sigmoid => input.map(num::sigmoid),
            UnaryKind::NormalCdf => input.map(num::std_normal_cdf),
            UnaryKind::RoundSte => input.map(f64::round_ties_even),
        };
        let rg = self.requires(idx);
        Ok(self.push(out, Op::Unary { kind, input: idx }, rg))
    }

    pub fn relu(&mut self, v: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, v)
    }

    pub fn softplus(&mut self, v: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, v)
    }

    pub fn exp(&mut self, v: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, v)
    }

    pub fn log(&mut self, v: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, v)
    }

    pub fn square(&mut self, v: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, v)
    }

    pub fn sqrt(&mut self, v: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, v)
    }

    pub fn sigmoid(&mut self, v: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, v)
    }

    /// Standard normal CDF applied elementwise; gradient is the pdf.
    pub fn normal_cdf(&mut self, v: Var) -> Result<Var> {
        self.unary(UnaryKind::NormalCdf, v)
    }

    /// Round to nearest integer (ties to even) with a straight-through
    /// gradient of exactly 1. The forward value is piecewise constant, so
    /// this op is deliberately excluded from finite-difference checking.
    pub fn round_ste(&mut self, v: Var) -> Result<Var> {
        self.unary(UnaryKind::RoundSte, v)
    }

    pub fn scale(&mut self, v: Var, factor: f64) -> Result<Var> {
        if !factor.is_finite() {
            return Err(Error::non_finite("scale factor"));
        }
        let idx = self.check(v)?;
        let out = self.nodes[idx].value.map(|x| x * factor);
        let rg = self.requires(idx);
        Ok(self.push(out, Op::Scale { input: idx, factor }, rg))
    }

    pub fn shift(&mut self, v: Var, offset: f64) -> Result<Var> {
        if !offset.is_finite() {
            return Err(Error::non_finite("shift offset"));
        }
        let idx = self.check(v)?;
        let out = self.nodes[idx].value.map(|x| x + offset);
        let rg = self.requires(idx);
        Ok(self.push(out, Op::Shift { input: idx }, rg))
    }

    pub fn neg(&mut self, v: Var) -> Result<Var> {
        self.scale(v, -1.0)
    }

    /// max(v, floor) composed from relu; gradient is zero below the floor.
    pub fn clamp_min(&mut self, v: Var, floor: f64) -> Result<Var> {
        let shifted = self.shift(v, -floor)?;
        let rectified = self.relu(shifted)?;
        self.shift(rectified, floor)
    }

    pub fn reduce_sum(&mut self, v: Var) -> Result<Var> {
        let idx = self.check(v)?;
        let out = self.nodes[idx].value.reduce_sum();
        let rg = self.requires(idx);
        Ok(self.push(out, Op::ReduceSum { input: idx }, rg))
    }

    pub fn reduce_mean(&mut self, v: Var) -> Result<Var> {
        let idx = self.check(v)?;
        let out = self.nodes[idx].value.reduce_mean();
        let rg = self.requires(idx);
        Ok(self.push(out, Op::ReduceMean { input: idx }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let mut idxs = Vec::with_capacity(parts.len());
        for p in parts {
            idxs.push(self.check(*p)?);
        }
        let values: Vec<&Tensor> = idxs.iter().map(|&i| &self.nodes[i].value).collect();
        let out = Tensor::concat(&values, axis)?;
        let rg = idxs.iter().any(|&i| self.requires(i));
        Ok(self.push(out, Op::Concat { inputs: idxs, axis }, rg))
    }

    pub fn slice(&mut self, v: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let idx = self.check(v)?;
        let out = self.nodes[idx].value.slice(axis, start, len)?;
        let rg = self.requires(idx);
        Ok(self.push(out, Op::Slice { input: idx, axis, start }, rg))
    }

    pub fn broadcast(&mut self, v: Var, shape: &[usize]) -> Result<Var> {
        let idx = self.check(v)?;
        let out = self.nodes[idx].value.broadcast_to(shape)?;
        let rg = self.requires(idx);
        Ok(self.push(out, Op::Broadcast { input: idx }, rg))
    }

    pub fn reshape(&mut self, v: Var, shape: &[usize]) -> Result<Var> {
        let idx = self.check(v)?;
        let out = self.nodes[idx].value.reshape(shape)?;
        let rg = self.requires(idx);
        Ok(self.push(out, Op::Reshape { input: idx }, rg))
    }

    /// Reverse sweep from a scalar loss. Writes d loss / d leaf into every
    /// leaf that requires gradients; a graph can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let idx = self.check(loss)?;
        if self.nodes[idx].value.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[idx].value.shape().to_vec(),
            });
        }
        if !self.nodes[idx].value.data()[0].is_finite() {
            return Err(Error::non_finite("backward loss value"));
        }
        self.consumed = true;
        if !self.nodes[idx].requires_grad {
            return Ok(()); // nothing trainable feeds the loss
        }
        self.nodes[idx].grad = Some(vec![1.0]);
        for i in (0..=idx).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            self.propagate(i, &g)?;
        }
        Ok(())
    }

    fn add_into(&mut self, idx: usize, contrib: &[f64]) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        let n = self.nodes[idx].value.numel();
        let slot = self.nodes[idx].grad.get_or_insert_with(|| vec![0.0; n]);
        for (s, c) in slot.iter_mut().zip(contrib) {
            *s += c;
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) -> Result<()> {
        let out_shape = self.nodes[idx].value.shape().to_vec();
        // Ops are matched by enum to keep all adjoint rules in one place.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Binary { kind, lhs, rhs } => {
                let (kind, lhs, rhs) = (*kind, *lhs, *rhs);
                let ls = self.nodes[lhs].value.shape().to_vec();
                let rs = self.nodes[rhs].value.shape().to_vec();
                match kind {
                    BinKind::Add => {
                        let cl = reduce_to_shape(g, &out_shape, &ls);
                        let cr = reduce_to_shape(g, &out_shape, &rs);
                        self.add_into(lhs, &cl);
                        self.add_into(rhs, &cr);
                    }
                    BinKind::Sub => {
                        let cl = reduce_to_shape(g, &out_shape, &ls);
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        let cr = reduce_to_shape(&neg, &out_shape, &rs);
                        self.add_into(lhs, &cl);
                        self.add_into(rhs, &cr);
                    }
                    BinKind::Mul => {
                        let bv = self.nodes[rhs].value.broadcast_to(&out_shape)?;
                        let av = self.nodes[lhs].value.broadcast_to(&out_shape)?;
                        let dl: Vec<f64> = g.iter().zip(bv.data()).map(|(&g, &b)| g * b).collect();
                        let dr: Vec<f64> = g.iter().zip(av.data()).map(|(&g, &a)| g * a).collect();
                        self.add_into(lhs, &reduce_to_shape(&dl, &out_shape, &ls));
                        self.add_into(rhs, &reduce_to_shape(&dr, &out_shape, &rs));
                    }
                    BinKind::Div => {
                        let bv = self.nodes[rhs].value.broadcast_to(&out_shape)?;
                        let av = self.nodes[lhs].value.broadcast_to(&out_shape)?;
                        let dl: Vec<f64> = g.iter().zip(bv.data()).map(|(&g, &b)| g / b).collect();
                        let dr: Vec<f64> = g
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(&g, (&a, &b))| -g * a / (b * b))
                            .collect();
                        self.add_into(lhs, &reduce_to_shape(&dl, &out_shape, &ls));
                        self.add_into(rhs, &reduce_to_shape(&dr, &out_shape, &rs));
                    }
                }
            }
            Op::Matmul { lhs, rhs } => {
                let (lhs, rhs) = (*lhs, *rhs);
                let gt = Tensor::new(out_shape.clone(), g.to_vec())?;
                let da = gt.matmul(&self.nodes[rhs].value.transpose2()?)?;
                let db = self.nodes[lhs].value.transpose2()?.matmul(&gt)?;
                self.add_into(lhs, da.data());
                self.add_into(rhs, db.data());
            }
            Op::Affine { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let gt = Tensor::new(out_shape.clone(), g.to_vec())?;
                let dx = gt.matmul(&self.nodes[w].value.transpose2()?)?;
                let dw = self.nodes[x].value.transpose2()?.matmul(&gt)?;
                let n = self.nodes[b].value.numel();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                self.add_into(x, dx.data());
                self.add_into(w, dw.data());
                self.add_into(b, &db);
            }
            Op::Unary { kind, input } => {
                let (kind, input) = (*kind, *input);
                let x = self.nodes[input].value.data();
                let y = self.nodes[idx].value.data();
                let contrib: Vec<f64> = match kind {
                    UnaryKind::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                    UnaryKind::Softplus => g.iter().zip(x).map(|(&g, &x)| g * num::sigmoid(x)).collect(),
                    UnaryKind::Exp => g.iter().zip(y).map(|(&g, &y)| g * y).collect(),
                    UnaryKind::Log => g.iter().zip(x).map(|(&g, &x)| g / x).collect(),
                    UnaryKind::Square => g.iter().zip(x).map(|(&g, &x)| 2.0 * x * g).collect(),
                    UnaryKind::Sqrt => g.iter().zip(y).map(|(&g, &y)| g / (2.0 * y)).collect(),
                    UnaryKind::Sigmoid => g.iter().zip(y).map(|(&g, &y)| g * y * (1.0 - y)).collect(),
                    UnaryKind::NormalCdf => g
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| g * num::std_normal_pdf(x))
                        .collect(),
                    UnaryKind::RoundSte => g.to_vec(),
                };
                self.add_into(input, &contrib);
            }
            Op::Scale { input, factor } => {
                let (input, factor) = (*input, *factor);
                let contrib: Vec<f64> = g.iter().map(|&g| g * factor).collect();
                self.add_into(input, &contrib);
            }
            Op::Shift { input } => {
                let input = *input;
                self.add_into(input, g);
            }
            Op::ReduceSum { input } => {
                let input = *input;
                let n = self.nodes[input].value.numel();
                self.add_into(input, &vec![g[0]; n]);
            }
            Op::ReduceMean { input } => {
                let input = *input;
                let n = self.nodes[input].value.numel();
                self.add_into(input, &vec![g[0] / n as f64; n]);
            }
            Op::Concat { inputs, axis } => {
                let (inputs, axis) = (inputs.clone(), *axis);
                let gt = Tensor::new(out_shape.clone(), g.to_vec())?;
                let mut start = 0;
                for i in inputs {
                    let len = self.nodes[i].value.shape()[axis];
                    let part = gt.slice(axis, start, len)?;
                    self.add_into(i, part.data());
                    start += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let (input, axis, start) = (*input, *axis, *start);
                let in_shape = self.nodes[input].value.shape().to_vec();
                let len = out_shape[axis];
                let outer: usize = in_shape[..axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let stride = in_shape[axis] * inner;
                let mut contrib = vec![0.0; numel_of(&in_shape)];
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = o * stride + start * inner;
                    contrib[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.add_into(input, &contrib);
            }
            Op::Broadcast { input } => {
                let input = *input;
                let in_shape = self.nodes[input].value.shape().to_vec();
                let contrib = reduce_to_shape(g, &out_shape, &in_shape);
                self.add_into(input, &contrib);
            }
            Op::Reshape { input } => {
                let input = *input;
                self.add_into(input, g);
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a node, if backward reached it.
    pub fn grad(&self, v: Var) -> Result<Option<&[f64]>> {
        let idx = self.check(v)?;
        Ok(self.nodes[idx].grad.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Result<Option<Tensor>> {
        let idx = self.check(v)?;
        match &self.nodes[idx].grad {
            Some(g) => Ok(Some(Tensor::new(
                self.nodes[idx].value.shape().to_vec(),
                g.clone(),
            )?)),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(g: &mut Graph, v: f64) -> Var {
        g.leaf(Tensor::scalar(v), true).unwrap()
    }

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut g = Graph::new();
        let w = scalar_leaf(&mut g, 3.0);
        let loss = g.square(w).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().unwrap(), &[6.0]);
    }

    #[test]
    fn bilinear_gradients_are_the_other_operand() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![1.0, 2.0]), true).unwrap();
        let b = g.leaf(Tensor::from_vec(vec![5.0, -3.0]), true).unwrap();
        let prod = g.mul(a, b).unwrap();
        let loss = g.reduce_sum(prod).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap().unwrap(), &[5.0, -3.0]);
        assert_eq!(g.grad(b).unwrap().unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_is_linear_over_summed_losses() {
        let build = |mode: u8| -> (f64, f64) {
            let mut g = Graph::new();
            let w = scalar_leaf(&mut g, 1.7);
            let l1 = g.square(w).unwrap();
            let e = g.exp(w).unwrap();
            let l2 = g.reduce_sum(e).unwrap();
            let loss = match mode {
                0 => l1,
                1 => l2,
                _ => g.add(l1, l2).unwrap(),
            };
            g.backward(loss).unwrap();
            (g.grad(w).unwrap().unwrap()[0], 0.0)
        };
        let (g1, _) = build(0);
        let (g2, _) = build(1);
        let (gsum, _) = build(2);
        assert!((gsum - (g1 + g2)).abs() < 1e-12);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::new();
        let w = scalar_leaf(&mut g, 2.0);
        let loss = g.square(w).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::GraphConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::from_vec(vec![1.0, 2.0]), true).unwrap();
        let y = g.square(w).unwrap();
        let err = g.backward(y).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { shape } if shape == vec![2]));
    }

    #[test]
    fn var_from_another_graph_is_rejected() {
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let a = scalar_leaf(&mut g1, 1.0);
        let b = scalar_leaf(&mut g2, 1.0);
        assert!(matches!(g1.add(a, b), Err(Error::GraphMismatch)));
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(3.0), true).unwrap();
        let frozen = g.leaf(Tensor::scalar(4.0), false).unwrap();
        let p = g.mul(w, frozen).unwrap();
        let loss = g.reduce_sum(p).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().unwrap(), &[4.0]);
        assert!(g.grad(frozen).unwrap().is_none());
    }

    #[test]
    fn all_frozen_graph_backward_is_a_noop() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(3.0), false).unwrap();
        let loss = g.square(a).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(a).unwrap().is_none());
        assert!(g.consumed());
    }

    #[test]
    fn relu_forward_and_subgradient_convention() {
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::from_vec(vec![-1.5, 0.0, 2.0]), true)
            .unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[0.0, 0.0, 2.0]);
        let loss = g.reduce_sum(y).unwrap();
        g.backward(loss).unwrap();
        // derivative at exactly zero is taken as zero
        assert_eq!(g.grad(x).unwrap().unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn round_ste_passes_gradient_through() {
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::from_vec(vec![2.4, 2.5, 3.5, -2.5]), true)
            .unwrap();
        let y = g.round_ste(x).unwrap();
        // ties to even
        assert_eq!(g.value(y).unwrap().data(), &[2.0, 2.0, 4.0, -2.0]);
        let loss = g.reduce_sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn matmul_gradients_match_manual_adjoints() {
        // loss = sum(A B), dA = 1 B^T, dB = A^T 1
        let mut g = Graph::new();
        let a = g
            .leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), true)
            .unwrap();
        let b = g
            .leaf(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap(), true)
            .unwrap();
        let p = g.matmul(a, b).unwrap();
        let loss = g.reduce_sum(p).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap().unwrap(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(g.grad(b).unwrap().unwrap(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn slice_concat_gradients_scatter_correctly() {
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap(), true)
            .unwrap();
        let left = g.slice(x, 1, 0, 1).unwrap();
        let right = g.slice(x, 1, 1, 2).unwrap();
        let sq = g.square(right).unwrap();
        let back = g.concat(&[left, sq], 1).unwrap();
        let loss = g.reduce_sum(back).unwrap();
        g.backward(loss).unwrap();
        // d/dx of col0 is 1, of cols 1..3 is 2x
        assert_eq!(g.grad(x).unwrap().unwrap(), &[1.0, 4.0, 6.0, 1.0, 10.0, 12.0]);
    }

    #[test]
    fn identical_forward_runs_are_bit_identical() {
        let run = || {
            let mut g = Graph::new();
            let x = g
                .leaf(Tensor::from_vec(vec![0.3, -1.2, 2.7]), true)
                .unwrap();
            let h = g.softplus(x).unwrap();
            let e = g.exp(h).unwrap();
            let s = g.reduce_mean(e).unwrap();
            g.backward(s).unwrap();
            (
                g.value(s).unwrap().data().to_vec(),
                g.grad(x).unwrap().unwrap().to_vec(),
            )
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn mean_of_four_elements_backprops_quarter() {
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]), true)
            .unwrap();
        let m = g.reduce_mean(x).unwrap();
        assert_eq!(g.value(m).unwrap().scalar_value().unwrap(), 2.5);
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap(), &[0.25; 4]);
    }

    #[test]
    fn broadcast_gradient_sums_over_expanded_axes() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0), true).unwrap();
        let b = g.broadcast(x, &[3, 2]).unwrap();
        let loss = g.reduce_sum(b).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap(), &[6.0]);
    }

    #[test]
    fn clamp_min_floors_value_and_kills_gradient_below() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![0.5, 2.0]), true).unwrap();
        let c = g.clamp_min(x, 1.0).unwrap();
        assert_eq!(g.value(c).unwrap().data(), &[1.0, 2.0]);
        let loss = g.reduce_sum(c).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap(), &[0.0, 1.0]);
    }
}
