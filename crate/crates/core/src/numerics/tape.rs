//! Dynamic reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each primitive appends a node
//! holding its output value; [`Tape::backward`] walks the nodes in reverse
//! and accumulates adjoints.

use std::collections::hash_map::DefaultHasher;
use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::sparse::CsrMatrix;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub id: String,
    pub tensor: Tensor,
    pub requires_grad: bool,
}

impl Parameter {
    pub fn new(id: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            id: id.into(),
            tensor,
            requires_grad: true,
        }
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Relu(Var),
    GatherRows(Var, Vec<usize>),
    Spmm(Var, Arc<CsrMatrix>),
    LogSoftmax(Var, f64),
    NllMean(Var, Vec<usize>),
    WeightedKl { logq: Var, p: Tensor, w: Vec<f64> },
    SumSquares(Var),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Gradients keyed by parameter id.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.map.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn add_into(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Register a parameter as a leaf; its gradient is reported by id.
    pub fn param(&mut self, p: &Parameter) -> Var {
        let v = self.push(p.tensor.clone(), Op::Leaf, p.requires_grad);
        if p.requires_grad {
            self.params.push((p.id.clone(), v));
        }
        v
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Matmul(a, b), ng))
    }

    /// `x + 1·b` where `b` is a `1×c` row broadcast over the rows of `x`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Dimension(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, &bb) in value.row_mut(i).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddRowBias(x, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.same_shape(bv, "add")?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.rows(), av.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.same_shape(bv, "sub")?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(av.rows(), av.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let av = self.value(a);
        av.same_shape(&mask, "mul_const")?;
        let data = av.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let value = Tensor::new(av.rows(), av.cols(), data)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::MulConst(a, mask), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = super::tensor::relu(self.value(a));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let value = self.value(a).gather_rows(idx)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// Sparse-dense product `adj · h`; the sparse side is constant.
    pub fn spmm(&mut self, adj: &Arc<CsrMatrix>, h: Var) -> Result<Var> {
        let value = adj.spmm(self.value(h))?;
        let ng = self.needs(h);
        Ok(self.push(value, Op::Spmm(h, Arc::clone(adj)), ng))
    }

    pub fn log_softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let value = super::tensor::row_log_softmax(self.value(a), temperature)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::LogSoftmax(a, temperature), ng))
    }

    /// `-(1/r) Σ_i logp[i, labels[i]]`.
    pub fn nll_mean(&mut self, logp: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logp);
        if lv.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "nll: {} rows, {} labels",
                lv.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Contract("nll over zero rows".into()));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= lv.cols()) {
            return Err(Error::Index {
                index: c,
                len: lv.cols(),
            });
        }
        let total: f64 = labels.iter().enumerate().map(|(i, &c)| lv.get(i, c)).sum();
        let value = Tensor::scalar(-total / labels.len() as f64);
        let ng = self.needs(logp);
        Ok(self.push(value, Op::NllMean(logp, labels.to_vec()), ng))
    }

    /// `Σ_i w_i Σ_c p_ic (ln p_ic − logq_ic)` with constant target rows `p`.
    pub fn weighted_kl(&mut self, p: Tensor, logq: Var, w: &[f64]) -> Result<Var> {
        let qv = self.value(logq);
        qv.same_shape(&p, "weighted_kl")?;
        if w.len() != p.rows() {
            return Err(Error::Dimension(format!(
                "weighted_kl: {} weights for {} rows",
                w.len(),
                p.rows()
            )));
        }
        let mut total = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for (&pc, &lq) in p.row(i).iter().zip(qv.row(i)) {
                if pc > 0.0 {
                    row += pc * (pc.ln() - lq);
                }
            }
            total += wi * row;
        }
        let ng = self.needs(logq);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedKl {
                logq,
                p,
                w: w.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumSquares(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Hash of the activation pattern of every ReLU on the tape. Two forward
    /// passes with equal signatures lie in the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                for &x in self.value(a).data() {
                    (x > 0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Gradients of scalar `loss` for every registered parameter. Parameters
    /// the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(idx, &g, &mut adj)?;
            // leaves keep their adjoint for reporting
            if matches!(node.op, Op::Leaf) {
                adj[idx] = Some(g);
            }
        }

        let mut map = HashMap::with_capacity(self.params.len());
        for (id, v) in &self.params {
            let g = adj
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| {
                    let [r, c] = self.value(*v).shape();
                    Tensor::zeros(r, c)
                });
            match map.entry(id.clone()) {
                Entry::Vacant(e) => {
                    e.insert(g);
                }
                Entry::Occupied(mut e) => {
                    for (a, b) in e.get_mut().data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
        }
        Ok(Gradients { map })
    }

    fn propagate(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    // dA = G·Bᵀ
                    let mut da = Tensor::zeros(m, k);
                    gemm(
                        m,
                        n,
                        k,
                        (g.data(), n as isize, 1),
                        (bv.data(), 1, n as isize),
                        da.data_mut(),
                        0.0,
                    );
                    add_into(&mut adj[a.0], da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ·G
                    let mut db = Tensor::zeros(k, n);
                    gemm(
                        k,
                        m,
                        n,
                        (av.data(), 1, k as isize),
                        (g.data(), n as isize, 1),
                        db.data_mut(),
                        0.0,
                    );
                    add_into(&mut adj[b.0], db);
                }
            }
            Op::AddRowBias(x, b) => {
                if self.needs(*x) {
                    add_into(&mut adj[x.0], g.clone());
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    add_into(&mut adj[b.0], db);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    add_into(&mut adj[a.0], g.clone());
                }
                if self.needs(*b) {
                    add_into(&mut adj[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    add_into(&mut adj[a.0], g.clone());
                }
                if self.needs(*b) {
                    add_into(&mut adj[b.0], g.map(|v| -v));
                }
            }
            Op::Scale(a, c) => {
                add_into(&mut adj[a.0], g.map(|v| v * c));
            }
            Op::MulConst(a, mask) => {
                let data = g.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
                add_into(&mut adj[a.0], Tensor::new(g.rows(), g.cols(), data)?);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                add_into(&mut adj[a.0], Tensor::new(g.rows(), g.cols(), data)?);
            }
            Op::GatherRows(a, idx) => {
                let [r, c] = self.value(*a).shape();
                let mut da = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in da.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                add_into(&mut adj[a.0], da);
            }
            Op::Spmm(h, m) => {
                add_into(&mut adj[h.0], m.spmm_transpose(g)?);
            }
            Op::LogSoftmax(a, t) => {
                // y = log_softmax(x/t); dx = (g − softmax·Σg) / t
                let y = &self.nodes[idx].value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let gs: f64 = g.row(i).iter().sum();
                    for ((o, &gv), &yv) in dx.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = (gv - yv.exp() * gs) / t;
                    }
                }
                add_into(&mut adj[a.0], dx);
            }
            Op::NllMean(a, labels) => {
                let [r, c] = self.value(*a).shape();
                let mut da = Tensor::zeros(r, c);
                let s = -g.data()[0] / r as f64;
                for (i, &l) in labels.iter().enumerate() {
                    da.row_mut(i)[l] = s;
                }
                add_into(&mut adj[a.0], da);
            }
            Op::WeightedKl { logq, p, w } => {
                let gs = g.data()[0];
                let mut dq = Tensor::zeros(p.rows(), p.cols());
                for (i, &wi) in w.iter().enumerate() {
                    for (o, &pc) in dq.row_mut(i).iter_mut().zip(p.row(i)) {
                        *o = -gs * wi * pc;
                    }
                }
                add_into(&mut adj[logq.0], dq);
            }
            Op::SumSquares(a) => {
                let gs = g.data()[0];
                add_into(&mut adj[a.0], self.value(*a).map(|x| 2.0 * gs * x));
            }
            Op::Sum(a) => {
                let [r, c] = self.value(*a).shape();
                add_into(&mut adj[a.0], Tensor::full(r, c, g.data()[0]));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = Parameter::new("w", Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let wv = tape.param(&w);
        let loss = tape.sum(wv);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("w").unwrap(), &Tensor::full(2, 2, 1.0));
    }

    #[test]
    fn half_square_gradient_is_identity_map() {
        let mut tape = Tape::new();
        let w = Parameter::new("w", Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let wv = tape.param(&w);
        let s = tape.sum_squares(wv);
        let loss = tape.scale(s, 0.5);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("w").unwrap(), &w.tensor);
    }

    #[test]
    fn unused_parameter_gets_zeros() {
        let mut tape = Tape::new();
        let a = Parameter::new("a", Tensor::full(1, 3, 2.0));
        let b = Parameter::new("b", Tensor::full(2, 2, 5.0));
        let av = tape.param(&a);
        tape.param(&b);
        let loss = tape.sum(av);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("b").unwrap(), &Tensor::zeros(2, 2));
    }

    #[test]
    fn relu_subgradient_at_examples() {
        let mut tape = Tape::new();
        let x = Parameter::new("x", Tensor::from_rows(&[[-1.0, 2.0, 0.0]]));
        let xv = tape.param(&x);
        let r = tape.relu(xv);
        let loss = tape.sum(r);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("x").unwrap(), &Tensor::from_rows(&[[0.0, 1.0, 0.0]]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = Parameter::new("x", Tensor::zeros(2, 2));
        let xv = tape.param(&x);
        assert!(matches!(tape.backward(xv), Err(Error::Contract(_))));
    }

    #[test]
    fn gather_scatters_back() {
        let mut tape = Tape::new();
        let x = Parameter::new("x", Tensor::from_rows(&[[1.0], [2.0], [3.0]]));
        let xv = tape.param(&x);
        let gathered = tape.gather_rows(xv, &[2, 0, 2]).unwrap();
        let loss = tape.sum(gathered);
        let g = tape.backward(loss).unwrap();
        assert_eq!(
            g.get("x").unwrap(),
            &Tensor::from_rows(&[[1.0], [0.0], [2.0]])
        );
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = Parameter::new("x", Tensor::full(1, 2, 3.0));
        let xv = tape.param(&x);
        let d = tape.detach(xv);
        let loss = tape.sum(d);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("x").unwrap(), &Tensor::zeros(1, 2));
    }
}
