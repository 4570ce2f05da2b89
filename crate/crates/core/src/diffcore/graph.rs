//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is built once with [`GraphBuilder`] and then evaluated many
//! times against different leaf tensors. Shapes are inferred from the leaves
//! at evaluation time, so one graph serves every batch size.

use std::collections::{BTreeMap, HashMap};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Axis selector for reductions, concatenation and slicing.
///
/// `Rows` is axis 0 (reducing over it leaves one row), `Cols` is axis 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf(String),
    Constant(Tensor),
    /// `a * b`
    MatMul(NodeId, NodeId),
    /// `a * b^T`
    MatMulT(NodeId, NodeId),
    /// Elementwise; `b` may be a single row broadcast over the rows of `a`.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    /// Elementwise clamp to `[lo, hi]`; zero gradient outside.
    Clamp(NodeId, f64, f64),
    Exp(NodeId),
    Softplus(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, Axis),
    LogSumExp(NodeId, Axis),
    /// Main diagonal of a square matrix as an `n x 1` column.
    Diag(NodeId),
    /// Row-wise `log N(x; mean, sigma^2 I)` as an `m x 1` column.
    GaussianLogDensity {
        x: NodeId,
        mean: NodeId,
        sigma: f64,
    },
    Concat(Vec<NodeId>, Axis),
    Slice {
        input: NodeId,
        axis: Axis,
        start: usize,
        len: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Exp(_) => "exp",
            Op::Softplus(_) => "softplus",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::LogSumExp(..) => "logsumexp",
            Op::Diag(_) => "diag",
            Op::GaussianLogDensity { .. } => "gaussian_log_density",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf(_) | Op::Constant(_) => vec![],
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => vec![*a, *b],
            Op::GaussianLogDensity { x, mean, .. } => vec![*x, *mean],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Clamp(a, ..)
            | Op::Exp(a)
            | Op::Softplus(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::LogSumExp(a, _)
            | Op::Diag(a) => vec![*a],
            Op::Slice { input, .. } => vec![*input],
            Op::Concat(xs, _) => xs.clone(),
        }
    }
}

/// Source of named leaf tensors.
pub trait Leaves {
    fn leaf(&self, name: &str) -> Option<&Tensor>;
}

impl Leaves for BTreeMap<String, Tensor> {
    fn leaf(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl Leaves for HashMap<String, Tensor> {
    fn leaf(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

/// Looks names up in the first source, then the second.
impl<A: Leaves + ?Sized, B: Leaves + ?Sized> Leaves for (&A, &B) {
    fn leaf(&self, name: &str) -> Option<&Tensor> {
        self.0.leaf(name).or_else(|| self.1.leaf(name))
    }
}

#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<Op>,
    leaf_ids: BTreeMap<String, NodeId>,
    names: BTreeMap<String, NodeId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.nodes.push(op);
        self.nodes.len() - 1
    }

    /// Named leaf; asking twice for the same name returns the same node.
    pub fn leaf(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.leaf_ids.get(name) {
            return id;
        }
        let id = self.push(Op::Leaf(name.to_string()));
        self.leaf_ids.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Constant(t))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.push(Op::Clamp(a, lo, hi))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: Axis) -> NodeId {
        self.push(Op::SumAxis(a, axis))
    }

    pub fn logsumexp(&mut self, a: NodeId, axis: Axis) -> NodeId {
        self.push(Op::LogSumExp(a, axis))
    }

    pub fn diag(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Diag(a))
    }

    pub fn gaussian_log_density(&mut self, x: NodeId, mean: NodeId, sigma: f64) -> NodeId {
        self.push(Op::GaussianLogDensity { x, mean, sigma })
    }

    pub fn concat(&mut self, parts: Vec<NodeId>, axis: Axis) -> NodeId {
        self.push(Op::Concat(parts, axis))
    }

    pub fn slice(&mut self, input: NodeId, axis: Axis, start: usize, len: usize) -> NodeId {
        self.push(Op::Slice {
            input,
            axis,
            start,
            len,
        })
    }

    /// `x * w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    /// Attach a name to a node so it can be read back from [`Values`].
    pub fn name(&mut self, id: NodeId, name: &str) {
        self.names.insert(name.to_string(), id);
    }

    pub fn build(self, output: NodeId) -> Graph {
        assert!(output < self.nodes.len(), "output node out of range");
        Graph {
            nodes: self.nodes,
            leaf_ids: self.leaf_ids,
            names: self.names,
            output,
        }
    }
}

/// Immutable, topologically ordered computation graph.
///
/// Nodes only reference earlier nodes, so insertion order is a valid
/// evaluation order and the graph is acyclic by construction.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Op>,
    leaf_ids: BTreeMap<String, NodeId>,
    names: BTreeMap<String, NodeId>,
    output: NodeId,
}

/// Value of every node from one evaluation.
#[derive(Clone, Debug)]
pub struct Values {
    values: Vec<Tensor>,
    names: BTreeMap<String, NodeId>,
    output: NodeId,
}

impl Values {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn named(&self, name: &str) -> Option<&Tensor> {
        self.names.get(name).map(|&id| &self.values[id])
    }

    pub fn output(&self) -> &Tensor {
        &self.values[self.output]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn broadcast_ok(op: &'static str, a: &Tensor, b: &Tensor) -> Result<bool> {
    let (ar, ac) = a.dims();
    let (br, bc) = b.dims();
    if (ar, ac) == (br, bc) {
        Ok(false)
    } else if br == 1 && bc == ac {
        Ok(true)
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let cols = a.cols();
    let bd = b.data();
    let bcast = bd.len() != a.len();
    a.data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = if bcast { bd[i % cols] } else { bd[i] };
            f(x, y)
        })
        .collect()
}

/// Sum of rows, used to reduce gradients of row-broadcast operands.
fn col_sums(rows: usize, cols: usize, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn matrix(r: usize, c: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(r, c, data).expect("extents computed by caller")
}

fn same_shape(t: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(t.shape().to_vec(), data).expect("same length")
}

impl Graph {
    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_names(&self) -> impl Iterator<Item = &str> {
        self.leaf_ids.keys().map(String::as_str)
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    /// Forward pass. Fails on a missing leaf, a shape mismatch, or any
    /// non-finite intermediate value.
    pub fn evaluate<L: Leaves + ?Sized>(&self, leaves: &L) -> Result<Values> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for op in &self.nodes {
            let v = self.forward(op, &values, leaves)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(op.name().to_string()));
            }
            values.push(v);
        }
        Ok(Values {
            values,
            names: self.names.clone(),
            output: self.output,
        })
    }

    fn forward<L: Leaves + ?Sized>(&self, op: &Op, v: &[Tensor], leaves: &L) -> Result<Tensor> {
        let out = match op {
            Op::Leaf(name) => leaves
                .leaf(name)
                .cloned()
                .ok_or_else(|| Error::MissingLeaf(name.clone()))?,
            Op::Constant(t) => t.clone(),
            Op::MatMul(a, b) => {
                let (a, b) = (&v[*a], &v[*b]);
                let (m, k) = a.dims();
                let (k2, n) = b.dims();
                if k != k2 {
                    return Err(Error::shape(
                        "matmul",
                        format!("{:?} x {:?}", a.shape(), b.shape()),
                    ));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
                matrix(m, n, out)
            }
            Op::MatMulT(a, b) => {
                let (a, b) = (&v[*a], &v[*b]);
                let (m, k) = a.dims();
                let (n, k2) = b.dims();
                if k != k2 {
                    return Err(Error::shape(
                        "matmul_t",
                        format!("{:?} x {:?}^T", a.shape(), b.shape()),
                    ));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, a.data(), false, b.data(), true, &mut out, false);
                matrix(m, n, out)
            }
            Op::Add(a, b) => {
                broadcast_ok("add", &v[*a], &v[*b])?;
                same_shape(&v[*a], zip_broadcast(&v[*a], &v[*b], |x, y| x + y))
            }
            Op::Sub(a, b) => {
                broadcast_ok("sub", &v[*a], &v[*b])?;
                same_shape(&v[*a], zip_broadcast(&v[*a], &v[*b], |x, y| x - y))
            }
            Op::Mul(a, b) => {
                broadcast_ok("mul", &v[*a], &v[*b])?;
                same_shape(&v[*a], zip_broadcast(&v[*a], &v[*b], |x, y| x * y))
            }
            Op::Scale(a, c) => v[*a].map(|x| x * c),
            Op::Tanh(a) => v[*a].map(f64::tanh),
            Op::Sigmoid(a) => v[*a].map(sigmoid),
            Op::Relu(a) => v[*a].map(|x| x.max(0.0)),
            Op::Clamp(a, lo, hi) => v[*a].map(|x| x.clamp(*lo, *hi)),
            Op::Exp(a) => v[*a].map(f64::exp),
            Op::Softplus(a) => v[*a].map(softplus),
            Op::Sum(a) => Tensor::scalar(v[*a].data().iter().sum()),
            Op::Mean(a) => {
                let t = &v[*a];
                Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
            }
            Op::SumAxis(a, axis) => {
                let t = &v[*a];
                let (r, c) = t.dims();
                match axis {
                    Axis::Rows => matrix(1, c, col_sums(r, c, t.data())),
                    Axis::Cols => matrix(
                        r,
                        1,
                        (0..r).map(|i| t.row_slice(i).iter().sum()).collect(),
                    ),
                }
            }
            Op::LogSumExp(a, axis) => {
                let t = &v[*a];
                let (r, c) = t.dims();
                match axis {
                    Axis::Cols => matrix(r, 1, (0..r).map(|i| lse(t.row_slice(i))).collect()),
                    Axis::Rows => {
                        let tt = t.transpose();
                        matrix(1, c, (0..c).map(|j| lse(tt.row_slice(j))).collect())
                    }
                }
            }
            Op::Diag(a) => {
                let t = &v[*a];
                let (r, c) = t.dims();
                if r != c {
                    return Err(Error::shape("diag", format!("{:?} is not square", t.shape())));
                }
                matrix(r, 1, (0..r).map(|i| t.get(i, i)).collect())
            }
            Op::GaussianLogDensity { x, mean, sigma } => {
                let (x, mu) = (&v[*x], &v[*mean]);
                if !x.same_dims(mu) {
                    return Err(Error::shape(
                        "gaussian_log_density",
                        format!("{:?} vs {:?}", x.shape(), mu.shape()),
                    ));
                }
                if *sigma <= 0.0 {
                    return Err(Error::invalid("gaussian_log_density needs sigma > 0"));
                }
                let (r, c) = x.dims();
                let norm = 0.5 * c as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
                let inv_var = 1.0 / (sigma * sigma);
                let out = (0..r)
                    .map(|i| {
                        let sq: f64 = x
                            .row_slice(i)
                            .iter()
                            .zip(mu.row_slice(i))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        -0.5 * sq * inv_var - norm
                    })
                    .collect();
                matrix(r, 1, out)
            }
            Op::Concat(parts, axis) => {
                let ts: Vec<&Tensor> = parts.iter().map(|&p| &v[p]).collect();
                concat(&ts, *axis)?
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let t = &v[*input];
                let (r, c) = t.dims();
                let extent = if *axis == Axis::Rows { r } else { c };
                if *len == 0 || start + len > extent {
                    return Err(Error::shape(
                        "slice",
                        format!("[{start}, {}) out of {extent}", start + len),
                    ));
                }
                match axis {
                    Axis::Rows => matrix(*len, c, t.data()[start * c..(start + len) * c].to_vec()),
                    Axis::Cols => {
                        let mut out = Vec::with_capacity(r * len);
                        for i in 0..r {
                            out.extend_from_slice(&t.row_slice(i)[*start..start + len]);
                        }
                        matrix(r, *len, out)
                    }
                }
            }
        };
        Ok(out)
    }

    /// Derivative of the scalar output with respect to every leaf.
    pub fn gradients<L: Leaves + ?Sized>(&self, leaves: &L) -> Result<BTreeMap<String, Tensor>> {
        let (_, grads) = self.value_and_gradients(leaves, |_| true)?;
        Ok(grads)
    }

    /// Output value plus gradients for the leaves selected by `wrt`.
    ///
    /// Backward work is skipped for nodes that do not depend on a selected
    /// leaf. Selected leaves unreachable from the output get zero gradients.
    pub fn value_and_gradients<L, F>(
        &self,
        leaves: &L,
        wrt: F,
    ) -> Result<(f64, BTreeMap<String, Tensor>)>
    where
        L: Leaves + ?Sized,
        F: Fn(&str) -> bool,
    {
        let values = self.evaluate(leaves)?;
        let out = values.output();
        if out.len() != 1 {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let value = out.data()[0];

        let mut active = vec![false; self.nodes.len()];
        for (i, op) in self.nodes.iter().enumerate() {
            active[i] = match op {
                Op::Leaf(name) => wrt(name),
                Op::Constant(_) => false,
                other => other.inputs().iter().any(|&j| active[j]),
            };
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if active[self.output] {
            adj[self.output] = Some(same_shape(out, vec![1.0]));
        }
        for id in (0..=self.output).rev() {
            if !active[id] {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            if let Op::Leaf(_) = self.nodes[id] {
                adj[id] = Some(g);
                continue;
            }
            self.backward(id, &g, &values, &active, &mut adj)?;
        }

        let mut grads = BTreeMap::new();
        for (name, &id) in &self.leaf_ids {
            if !wrt(name) {
                continue;
            }
            let g = match adj[id].take() {
                Some(g) => g,
                None => match leaves.leaf(name) {
                    Some(t) => Tensor::zeros(t.shape()),
                    None => return Err(Error::MissingLeaf(name.clone())),
                },
            };
            grads.insert(name.clone(), g);
        }
        Ok((value, grads))
    }

    fn backward(
        &self,
        id: NodeId,
        g: &Tensor,
        v: &Values,
        active: &[bool],
        adj: &mut [Option<Tensor>],
    ) -> Result<()> {
        let mut acc = |node: NodeId, delta: Vec<f64>| {
            if !active[node] {
                return;
            }
            match &mut adj[node] {
                Some(t) => {
                    for (a, d) in t.data_mut().iter_mut().zip(delta) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(same_shape(v.get(node), delta)),
            }
        };
        let gd = g.data();
        match &self.nodes[id] {
            Op::Leaf(_) | Op::Constant(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (v.get(*a), v.get(*b));
                let (m, k) = ta.dims();
                let n = tb.cols();
                if active[*a] {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, tb.data(), true, &mut da, false);
                    acc(*a, da);
                }
                if active[*b] {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, gd, false, &mut db, false);
                    acc(*b, db);
                }
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (v.get(*a), v.get(*b));
                let (m, k) = ta.dims();
                let n = tb.rows();
                if active[*a] {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, tb.data(), false, &mut da, false);
                    acc(*a, da);
                }
                if active[*b] {
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, gd, true, ta.data(), false, &mut db, false);
                    acc(*b, db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[id], Op::Sub(..)) { -1.0 } else { 1.0 };
                let (ta, tb) = (v.get(*a), v.get(*b));
                acc(*a, gd.to_vec());
                if active[*b] {
                    let d = if tb.len() != ta.len() {
                        col_sums(ta.rows(), ta.cols(), gd)
                    } else {
                        gd.to_vec()
                    };
                    acc(*b, d.into_iter().map(|x| sign * x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (v.get(*a), v.get(*b));
                if active[*a] {
                    acc(*a, zip_broadcast(g, tb, |x, y| x * y));
                }
                if active[*b] {
                    let prod: Vec<f64> = gd.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    let d = if tb.len() != ta.len() {
                        col_sums(ta.rows(), ta.cols(), &prod)
                    } else {
                        prod
                    };
                    acc(*b, d);
                }
            }
            Op::Scale(a, c) => acc(*a, gd.iter().map(|x| x * c).collect()),
            Op::Tanh(a) => {
                let y = v.get(id).data();
                acc(*a, gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
            }
            Op::Sigmoid(a) => {
                let y = v.get(id).data();
                acc(*a, gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Relu(a) => {
                let x = v.get(*a).data();
                acc(
                    *a,
                    gd.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Clamp(a, lo, hi) => {
                let x = v.get(*a).data();
                acc(
                    *a,
                    gd.iter()
                        .zip(x)
                        .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Exp(a) => {
                let y = v.get(id).data();
                acc(*a, gd.iter().zip(y).map(|(g, y)| g * y).collect());
            }
            Op::Softplus(a) => {
                let x = v.get(*a).data();
                acc(*a, gd.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect());
            }
            Op::Sum(a) => acc(*a, vec![gd[0]; v.get(*a).len()]),
            Op::Mean(a) => {
                let n = v.get(*a).len();
                acc(*a, vec![gd[0] / n as f64; n]);
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = v.get(*a).dims();
                let d = (0..r * c)
                    .map(|i| match axis {
                        Axis::Rows => gd[i % c],
                        Axis::Cols => gd[i / c],
                    })
                    .collect();
                acc(*a, d);
            }
            Op::LogSumExp(a, axis) => {
                let t = v.get(*a);
                let y = v.get(id).data();
                let (r, c) = t.dims();
                let d = t
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let k = match axis {
                            Axis::Rows => i % c,
                            Axis::Cols => i / c,
                        };
                        gd[k] * (x - y[k]).exp()
                    })
                    .collect::<Vec<_>>();
                debug_assert_eq!(d.len(), r * c);
                acc(*a, d);
            }
            Op::Diag(a) => {
                let n = v.get(*a).rows();
                let mut d = vec![0.0; n * n];
                for i in 0..n {
                    d[i * n + i] = gd[i];
                }
                acc(*a, d);
            }
            Op::GaussianLogDensity { x, mean, sigma } => {
                let (tx, tm) = (v.get(*x), v.get(*mean));
                let c = tx.cols();
                let inv_var = 1.0 / (sigma * sigma);
                let dx: Vec<f64> = tx
                    .data()
                    .iter()
                    .zip(tm.data())
                    .enumerate()
                    .map(|(i, (a, b))| -gd[i / c] * (a - b) * inv_var)
                    .collect();
                if active[*mean] {
                    acc(*mean, dx.iter().map(|d| -d).collect());
                }
                acc(*x, dx);
            }
            Op::Concat(parts, axis) => {
                let (r, c) = g.dims();
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = v.get(p).dims();
                    let d = match axis {
                        Axis::Rows => gd[offset * c..(offset + pr) * c].to_vec(),
                        Axis::Cols => {
                            let mut d = Vec::with_capacity(r * pc);
                            for i in 0..r {
                                d.extend_from_slice(&g.row_slice(i)[offset..offset + pc]);
                            }
                            d
                        }
                    };
                    offset += if *axis == Axis::Rows { pr } else { pc };
                    acc(p, d);
                }
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let (r, c) = v.get(*input).dims();
                let mut d = vec![0.0; r * c];
                match axis {
                    Axis::Rows => d[start * c..(start + len) * c].copy_from_slice(gd),
                    Axis::Cols => {
                        for i in 0..r {
                            d[i * c + start..i * c + start + len]
                                .copy_from_slice(&gd[i * len..(i + 1) * len]);
                        }
                    }
                }
                acc(*input, d);
            }
        }
        Ok(())
    }
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn concat(ts: &[&Tensor], axis: Axis) -> Result<Tensor> {
    if ts.is_empty() {
        return Err(Error::shape("concat", "no inputs"));
    }
    match axis {
        Axis::Rows => {
            let c = ts[0].cols();
            if ts.iter().any(|t| t.cols() != c) {
                return Err(Error::shape("concat", "column counts differ"));
            }
            let r = ts.iter().map(|t| t.rows()).sum();
            let data = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
            Ok(matrix(r, c, data))
        }
        Axis::Cols => {
            let r = ts[0].rows();
            if ts.iter().any(|t| t.rows() != r) {
                return Err(Error::shape("concat", "row counts differ"));
            }
            let c = ts.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                for t in ts {
                    data.extend_from_slice(t.row_slice(i));
                }
            }
            Ok(matrix(r, c, data))
        }
    }
}
