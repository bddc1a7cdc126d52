//! Append-only computation graph with reverse-mode differentiation.
//!
//! Every backward rule is written in terms of graph ops, so a gradient can be
//! recorded as ordinary nodes ([`Graph::grad_graph`]) and differentiated again.
//! Node indices are a topological order: inputs always precede their users.

use std::rc::Rc;

use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag plus input references.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// `op(a) * op(b)` for 2-D operands, `op` transposing when the flag is set.
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    /// `x[m,n] + bias[n]` broadcast over rows.
    AddBias { x: NodeId, bias: NodeId },
    /// Sum of a 2-D tensor over `axis`, producing 1-D.
    SumAxis { x: NodeId, axis: usize },
    /// Repeat a 1-D tensor `n` times along the new `axis`.
    Broadcast { x: NodeId, axis: usize, n: usize },
    Relu(NodeId),
    /// `g` where `x > 0`, else 0. Not differentiable in `x` (relu'' = 0).
    ReluMask { g: NodeId, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `a / (b + eps)`; a zero denominator yields 0.
    DivEps { a: NodeId, b: NodeId, eps: f64 },
    /// Population standard deviation of each row.
    StdRows(NodeId),
    Softmax(NodeId),
    /// Per-row softmax cross-entropy against integer labels.
    SoftmaxCe { x: NodeId, labels: Rc<[usize]> },
    SliceCols { x: NodeId, start: usize, len: usize },
    PadCols { x: NodeId, start: usize, total: usize },
    Reshape { x: NodeId, shape: Vec<usize> },
    Conv { x: NodeId, w: NodeId, stride: usize },
    ConvBackInput { g: NodeId, w: NodeId, stride: usize, in_hw: (usize, usize) },
    ConvBackWeight { x: NodeId, g: NodeId, stride: usize, kernel: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::SumAxis { .. } => "sum_axis",
            Op::Broadcast { .. } => "broadcast",
            Op::Relu(_) => "relu",
            Op::ReluMask { .. } => "relu_mask",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::DivEps { .. } => "div_eps",
            Op::StdRows(_) => "std_rows",
            Op::Softmax(_) => "softmax",
            Op::SoftmaxCe { .. } => "softmax_ce",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::Reshape { .. } => "reshape",
            Op::Conv { .. } => "conv2d",
            Op::ConvBackInput { .. } => "conv2d_back_input",
            Op::ConvBackWeight { .. } => "conv2d_back_weight",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![a, b],
            Op::AddBias { x, bias } => vec![x, bias],
            Op::SumAxis { x, .. } | Op::Broadcast { x, .. } => vec![x],
            Op::Relu(x) | Op::Scale(x, _) | Op::StdRows(x) | Op::Softmax(x) => vec![x],
            Op::ReluMask { g, x } => vec![g, x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::DivEps { a, b, .. } => vec![a, b],
            Op::SoftmaxCe { x, .. } => vec![x],
            Op::SliceCols { x, .. } | Op::PadCols { x, .. } | Op::Reshape { x, .. } => vec![x],
            Op::Conv { x, w, .. } => vec![x, w],
            Op::ConvBackInput { g, w, .. } => vec![g, w],
            Op::ConvBackWeight { x, g, .. } => vec![x, g],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub value: Tensor,
    /// Set when the graph was built for higher-order differentiation.
    pub retained: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    retain: bool,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [m, n] => Ok((m, n)),
        _ => Err(shape_err(op, t.shape(), &[])),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn div_eps(a: f64, b: f64, eps: f64) -> f64 {
    let d = b + eps;
    if d == 0.0 {
        0.0
    } else {
        a / d
    }
}

fn conv_dims(x: &[usize], w: &[usize], stride: usize) -> Option<ConvDims> {
    match (x, w) {
        (&[batch, in_h, in_w, in_c], &[out_c, k, k2, wc])
            if k == k2 && wc == in_c && k <= in_h && k <= in_w && stride > 0 && k > 0 =>
        {
            Some(ConvDims {
                batch,
                in_h,
                in_w,
                in_c,
                out_c,
                kernel: k,
                stride,
            })
        }
        _ => None,
    }
}

impl Graph {
    /// A graph whose gradients can themselves be differentiated.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            retain: true,
        }
    }

    /// A graph for first-order use only; [`Graph::grad_graph`] is rejected.
    pub fn without_retention() -> Self {
        Graph {
            nodes: Vec::new(),
            retain: false,
        }
    }

    pub fn retains_higher_order(&self) -> bool {
        self.retain
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// All nodes in recording order.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            retained: self.retain,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Appends `op` after evaluating it against the current input values.
    pub fn apply(&mut self, op: Op) -> Result<NodeId> {
        if let Some(bad) = op.inputs().into_iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::UnknownNode(bad.0));
        }
        let value = self.compute(&op)?;
        self.nodes.push(Node {
            op,
            value,
            retained: self.retain,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Re-evaluates every non-leaf node from its recorded inputs and returns the
    /// indices whose recomputed value differs bitwise from the stored one.
    pub fn replay(&self) -> Result<Vec<usize>> {
        let mut bad = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let v = self.compute(&node.op)?;
            let same = v.shape() == node.value.shape()
                && v.data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                bad.push(i);
            }
        }
        Ok(bad)
    }

    fn compute(&self, op: &Op) -> Result<Tensor> {
        let v = |id: NodeId| &self.nodes[id.0].value;
        let name = op.name();
        Ok(match op {
            Op::Leaf => unreachable!("leaves are never recomputed"),
            &Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = dims2(name, v(a))?;
                let (br, bc) = dims2(name, v(b))?;
                let k_a = if ta { ar } else { ac };
                let k_b = if tb { bc } else { br };
                if k_a != k_b {
                    return Err(shape_err(name, v(a).shape(), v(b).shape()));
                }
                let (c, m, n) = kernels::matmul(v(a).data(), ar, ac, ta, v(b).data(), br, bc, tb);
                Tensor::from_parts(vec![m, n], c)
            }
            &Op::AddBias { x, bias } => {
                let (m, n) = dims2(name, v(x))?;
                if v(bias).shape() != [n] {
                    return Err(shape_err(name, v(x).shape(), v(bias).shape()));
                }
                let b = v(bias).data();
                let mut out = v(x).data().to_vec();
                for row in out.chunks_mut(n) {
                    for (o, bb) in row.iter_mut().zip(b) {
                        *o += bb;
                    }
                }
                Tensor::from_parts(vec![m, n], out)
            }
            &Op::SumAxis { x, axis } => {
                let (m, n) = dims2(name, v(x))?;
                let d = v(x).data();
                match axis {
                    0 => {
                        let mut out = vec![0.0; n];
                        for row in d.chunks(n) {
                            for (o, r) in out.iter_mut().zip(row) {
                                *o += r;
                            }
                        }
                        Tensor::from_parts(vec![n], out)
                    }
                    1 => Tensor::from_parts(vec![m], d.chunks(n).map(|r| r.iter().sum()).collect()),
                    _ => return Err(shape_err(name, v(x).shape(), &[axis])),
                }
            }
            &Op::Broadcast { x, axis, n } => {
                let len = match *v(x).shape() {
                    [len] => len,
                    _ => return Err(shape_err(name, v(x).shape(), &[n])),
                };
                if n == 0 {
                    return Err(shape_err(name, v(x).shape(), &[n]));
                }
                let d = v(x).data();
                match axis {
                    0 => Tensor::from_parts(vec![n, len], d.repeat(n)),
                    1 => Tensor::from_parts(
                        vec![len, n],
                        d.iter().flat_map(|&e| std::iter::repeat_n(e, n)).collect(),
                    ),
                    _ => return Err(shape_err(name, v(x).shape(), &[axis])),
                }
            }
            &Op::Relu(x) => v(x).map(|e| if e > 0.0 { e } else { 0.0 }),
            &Op::ReluMask { g, x } => {
                self.same_shape(name, g, x)?;
                zip_map(v(g), v(x), |gg, xx| if xx > 0.0 { gg } else { 0.0 })
            }
            &Op::Add(a, b) => {
                self.same_shape(name, a, b)?;
                zip_map(v(a), v(b), |p, q| p + q)
            }
            &Op::Sub(a, b) => {
                self.same_shape(name, a, b)?;
                zip_map(v(a), v(b), |p, q| p - q)
            }
            &Op::Mul(a, b) => {
                self.same_shape(name, a, b)?;
                zip_map(v(a), v(b), |p, q| p * q)
            }
            &Op::Scale(x, c) => v(x).map(|e| e * c),
            &Op::DivEps { a, b, eps } => {
                self.same_shape(name, a, b)?;
                zip_map(v(a), v(b), |p, q| div_eps(p, q, eps))
            }
            &Op::StdRows(x) => {
                let (m, n) = dims2(name, v(x))?;
                let out = v(x)
                    .data()
                    .chunks(n)
                    .map(|r| {
                        let mu = r.iter().sum::<f64>() / n as f64;
                        (r.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / n as f64).sqrt()
                    })
                    .collect();
                Tensor::from_parts(vec![m], out)
            }
            &Op::Softmax(x) => {
                let (m, n) = dims2(name, v(x))?;
                let mut out = Vec::with_capacity(m * n);
                for r in v(x).data().chunks(n) {
                    let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = r.iter().map(|e| (e - mx).exp()).sum();
                    out.extend(r.iter().map(|e| (e - mx).exp() / z));
                }
                Tensor::from_parts(vec![m, n], out)
            }
            Op::SoftmaxCe { x, labels } => {
                let (m, n) = dims2(name, v(*x))?;
                if labels.len() != m || labels.iter().any(|&l| l >= n) {
                    return Err(shape_err(name, v(*x).shape(), &[labels.len()]));
                }
                let out = v(*x)
                    .data()
                    .chunks(n)
                    .zip(labels.iter())
                    .map(|(r, &l)| {
                        let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = mx + r.iter().map(|e| (e - mx).exp()).sum::<f64>().ln();
                        lse - r[l]
                    })
                    .collect();
                Tensor::from_parts(vec![m], out)
            }
            &Op::SliceCols { x, start, len } => {
                let (m, n) = dims2(name, v(x))?;
                if len == 0 || start + len > n {
                    return Err(shape_err(name, v(x).shape(), &[start, len]));
                }
                let out = v(x)
                    .data()
                    .chunks(n)
                    .flat_map(|r| r[start..start + len].iter().copied())
                    .collect();
                Tensor::from_parts(vec![m, len], out)
            }
            &Op::PadCols { x, start, total } => {
                let (m, len) = dims2(name, v(x))?;
                if start + len > total {
                    return Err(shape_err(name, v(x).shape(), &[start, total]));
                }
                let mut out = vec![0.0; m * total];
                for (dst, src) in out.chunks_mut(total).zip(v(x).data().chunks(len)) {
                    dst[start..start + len].copy_from_slice(src);
                }
                Tensor::from_parts(vec![m, total], out)
            }
            Op::Reshape { x, shape } => {
                let src = v(*x);
                if shape.iter().product::<usize>() != src.len() || shape.contains(&0) {
                    return Err(shape_err(name, src.shape(), shape));
                }
                Tensor::from_parts(shape.clone(), src.data().to_vec())
            }
            &Op::Conv { x, w, stride } => {
                let d = conv_dims(v(x).shape(), v(w).shape(), stride)
                    .ok_or_else(|| shape_err(name, v(x).shape(), v(w).shape()))?;
                Tensor::from_parts(d.output_shape(), kernels::conv2d(v(x).data(), v(w).data(), &d))
            }
            &Op::ConvBackInput {
                g,
                w,
                stride,
                in_hw,
            } => {
                let gs = v(g).shape();
                let ws = v(w).shape();
                let d = match (gs, ws) {
                    (&[batch, ..], &[.., c]) => {
                        conv_dims(&[batch, in_hw.0, in_hw.1, c], ws, stride)
                    }
                    _ => None,
                }
                .filter(|d| d.output_shape() == gs)
                .ok_or_else(|| shape_err(name, gs, ws))?;
                Tensor::from_parts(
                    d.input_shape(),
                    kernels::conv2d_back_input(v(g).data(), v(w).data(), &d),
                )
            }
            &Op::ConvBackWeight {
                x,
                g,
                stride,
                kernel,
            } => {
                let xs = v(x).shape();
                let gs = v(g).shape();
                let d = match (xs, gs) {
                    (&[_, _, _, c], &[.., o]) => conv_dims(xs, &[o, kernel, kernel, c], stride),
                    _ => None,
                }
                .filter(|d| d.output_shape() == gs)
                .ok_or_else(|| shape_err(name, xs, gs))?;
                Tensor::from_parts(
                    d.weight_shape(),
                    kernels::conv2d_back_weight(v(x).data(), v(g).data(), &d),
                )
            }
        })
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    // ---- builders -------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        self.apply(Op::MatMul { a, b, ta, tb })
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.apply(Op::AddBias { x, bias })
    }

    /// `x * w + b` with `x: [m, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::SumAxis { x, axis })
    }

    pub fn broadcast(&mut self, x: NodeId, axis: usize, n: usize) -> Result<NodeId> {
        self.apply(Op::Broadcast { x, axis, n })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu(x))
    }

    pub fn relu_mask(&mut self, g: NodeId, x: NodeId) -> Result<NodeId> {
        self.apply(Op::ReluMask { g, x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale(x, c))
    }

    pub fn div_eps(&mut self, a: NodeId, b: NodeId, eps: f64) -> Result<NodeId> {
        self.apply(Op::DivEps { a, b, eps })
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, n) = dims2("mean_rows", self.value(x))?;
        let s = self.sum_axis(x, 1)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn std_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::StdRows(x))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let flat = self.reshape(x, vec![1, self.value(x).len()])?;
        self.sum_axis(flat, 1)
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let flat = self.reshape(x, vec![1, self.value(x).len()])?;
        self.mean_rows(flat)
    }

    pub fn std_all(&mut self, x: NodeId) -> Result<NodeId> {
        let flat = self.reshape(x, vec![1, self.value(x).len()])?;
        self.std_rows(flat)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Softmax(x))
    }

    pub fn softmax_ce(&mut self, x: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.apply(Op::SoftmaxCe {
            x,
            labels: labels.into(),
        })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(Op::SliceCols { x, start, len })
    }

    pub fn pad_cols(&mut self, x: NodeId, start: usize, total: usize) -> Result<NodeId> {
        self.apply(Op::PadCols { x, start, total })
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::Reshape { x, shape })
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize) -> Result<NodeId> {
        self.apply(Op::Conv { x, w, stride })
    }

    pub fn conv2d_back_input(
        &mut self,
        g: NodeId,
        w: NodeId,
        stride: usize,
        in_hw: (usize, usize),
    ) -> Result<NodeId> {
        self.apply(Op::ConvBackInput {
            g,
            w,
            stride,
            in_hw,
        })
    }

    pub fn conv2d_back_weight(
        &mut self,
        x: NodeId,
        g: NodeId,
        stride: usize,
        kernel: usize,
    ) -> Result<NodeId> {
        self.apply(Op::ConvBackWeight {
            x,
            g,
            stride,
            kernel,
        })
    }

    // ---- differentiation ------------------------------------------------

    /// Gradients of the scalar `output` with respect to `wrt`, as plain tensors.
    /// Nodes created while differentiating are discarded afterwards.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let mark = self.nodes.len();
        let ids = self.reverse(output, wrt);
        let out = ids.map(|ids| ids.iter().map(|id| self.value(*id).clone()).collect());
        self.nodes.truncate(mark);
        out
    }

    /// Gradients recorded as graph nodes so expressions built from them can be
    /// differentiated again (double backprop).
    pub fn grad_graph(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if !self.retain {
            return Err(Error::NotRetained);
        }
        self.reverse(output, wrt)
    }

    fn reverse(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let n = self.nodes.len();
        if let Some(bad) = std::iter::once(&output).chain(wrt).find(|id| id.0 >= n) {
            return Err(Error::UnknownNode(bad.0));
        }
        if !self.value(output).is_scalar() {
            return Err(Error::NonScalar(self.shape(output).to_vec()));
        }
        let end = output.0 + 1;
        let mut reach = vec![false; end];
        for w in wrt {
            if w.0 < end {
                reach[w.0] = true;
            }
        }
        for i in 0..end {
            if !reach[i] {
                reach[i] = self.nodes[i].op.inputs().iter().any(|j| reach[j.0]);
            }
        }

        let mut grads: Vec<Option<NodeId>> = vec![None; end];
        if reach[output.0] {
            let seed = Tensor::full(self.shape(output).to_vec(), 1.0);
            grads[output.0] = Some(self.leaf(seed));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op.clone();
            for (input, contrib) in self.vjp(&op, NodeId(i), g, &reach)? {
                grads[input.0] = Some(match grads[input.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = Tensor::zeros(self.shape(*w).to_vec());
                    self.leaf(z)
                }
            })
            .collect())
    }

    /// Vector-Jacobian products of `op` (whose output node is `out`) for every
    /// input that lies on a path from a differentiation target.
    fn vjp(
        &mut self,
        op: &Op,
        out: NodeId,
        g: NodeId,
        reach: &[bool],
    ) -> Result<Vec<(NodeId, NodeId)>> {
        let need = |id: NodeId| reach[id.0];
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                if need(a) {
                    let ga = if ta {
                        self.matmul_t(b, g, tb, true)?
                    } else {
                        self.matmul_t(g, b, false, !tb)?
                    };
                    res.push((a, ga));
                }
                if need(b) {
                    let gb = if tb {
                        self.matmul_t(g, a, true, ta)?
                    } else {
                        self.matmul_t(a, g, !ta, false)?
                    };
                    res.push((b, gb));
                }
            }
            Op::AddBias { x, bias } => {
                if need(x) {
                    res.push((x, g));
                }
                if need(bias) {
                    res.push((bias, self.sum_axis(g, 0)?));
                }
            }
            Op::SumAxis { x, axis } => {
                if need(x) {
                    let n = self.shape(x)[axis];
                    res.push((x, self.broadcast(g, axis, n)?));
                }
            }
            Op::Broadcast { x, axis, .. } => {
                if need(x) {
                    res.push((x, self.sum_axis(g, axis)?));
                }
            }
            Op::Relu(x) => {
                if need(x) {
                    res.push((x, self.relu_mask(g, x)?));
                }
            }
            Op::ReluMask { g: upstream, x } => {
                if need(upstream) {
                    res.push((upstream, self.relu_mask(g, x)?));
                }
            }
            Op::Add(a, b) => {
                if need(a) {
                    res.push((a, g));
                }
                if need(b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    res.push((a, g));
                }
                if need(b) {
                    res.push((b, self.scale(g, -1.0)?));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    res.push((a, self.mul(g, b)?));
                }
                if need(b) {
                    res.push((b, self.mul(g, a)?));
                }
            }
            Op::Scale(x, c) => {
                if need(x) {
                    res.push((x, self.scale(g, c)?));
                }
            }
            Op::DivEps { a, b, eps } => {
                if need(a) {
                    res.push((a, self.div_eps(g, b, eps)?));
                }
                if need(b) {
                    // -g * a / (b + eps)^2
                    let ga = self.mul(g, a)?;
                    let q = self.div_eps(ga, b, eps)?;
                    let q = self.div_eps(q, b, eps)?;
                    res.push((b, self.scale(q, -1.0)?));
                }
            }
            Op::StdRows(x) => {
                if need(x) {
                    // d sigma / d x_i = (x_i - mu) / (n sigma), taken as 0 where sigma == 0
                    let n = self.shape(x)[1];
                    let mu = self.mean_rows(x)?;
                    let mu = self.broadcast(mu, 1, n)?;
                    let centered = self.sub(x, mu)?;
                    let denom = self.scale(out, n as f64)?;
                    let coef = self.div_eps(g, denom, 0.0)?;
                    let coef = self.broadcast(coef, 1, n)?;
                    res.push((x, self.mul(centered, coef)?));
                }
            }
            Op::Softmax(x) => {
                if need(x) {
                    let k = self.shape(x)[1];
                    let gs = self.mul(g, out)?;
                    let dot = self.sum_axis(gs, 1)?;
                    let dot = self.broadcast(dot, 1, k)?;
                    let diff = self.sub(g, dot)?;
                    res.push((x, self.mul(out, diff)?));
                }
            }
            Op::SoftmaxCe { x, ref labels } => {
                if need(x) {
                    let (m, k) = (self.shape(x)[0], self.shape(x)[1]);
                    let mut onehot = vec![0.0; m * k];
                    for (r, &l) in labels.iter().enumerate() {
                        onehot[r * k + l] = 1.0;
                    }
                    let onehot = self.leaf(Tensor::from_parts(vec![m, k], onehot));
                    let p = self.softmax(x)?;
                    let diff = self.sub(p, onehot)?;
                    let gb = self.broadcast(g, 1, k)?;
                    res.push((x, self.mul(gb, diff)?));
                }
            }
            Op::SliceCols { x, start, .. } => {
                if need(x) {
                    let total = self.shape(x)[1];
                    res.push((x, self.pad_cols(g, start, total)?));
                }
            }
            Op::PadCols { x, start, .. } => {
                if need(x) {
                    let len = self.shape(x)[1];
                    res.push((x, self.slice_cols(g, start, len)?));
                }
            }
            Op::Reshape { x, .. } => {
                if need(x) {
                    let shape = self.shape(x).to_vec();
                    res.push((x, self.reshape(g, shape)?));
                }
            }
            Op::Conv { x, w, stride } => {
                if need(x) {
                    let s = self.shape(x);
                    let in_hw = (s[1], s[2]);
                    res.push((x, self.conv2d_back_input(g, w, stride, in_hw)?));
                }
                if need(w) {
                    let k = self.shape(w)[1];
                    res.push((w, self.conv2d_back_weight(x, g, stride, k)?));
                }
            }
            Op::ConvBackInput { g: up, w, stride, .. } => {
                if need(up) {
                    res.push((up, self.conv2d(g, w, stride)?));
                }
                if need(w) {
                    let k = self.shape(w)[1];
                    res.push((w, self.conv2d_back_weight(g, up, stride, k)?));
                }
            }
            Op::ConvBackWeight { x, g: up, stride, .. } => {
                if need(x) {
                    let s = self.shape(x);
                    let in_hw = (s[1], s[2]);
                    res.push((x, self.conv2d_back_input(up, g, stride, in_hw)?));
                }
                if need(up) {
                    res.push((up, self.conv2d(x, g, stride)?));
                }
            }
        }
        Ok(res)
    }
}
