//! Recorded computation graphs.
//!
//! A [`Graph`] is built once per (model, batch shape) and executed many times
//! with different leaf bindings. Nodes are stored in insertion order, which is
//! also a topological order: an op may only reference node ids that already
//! exist.

use crate::error::{CoreError, Result};
use crate::numerics::array::{numel, NdArray};

pub type NodeId = usize;

/// Primitive operations the graph can record.
#[derive(Debug, Clone)]
pub enum Op {
    /// Externally bound input; `trainable` marks parameter leaves that
    /// receive gradients.
    Leaf { name: String, trainable: bool },
    /// Fixed values baked into the graph (masks, rotation tables).
    Constant(NdArray<f64>),
    /// Matrix product; see [`MatMulKind`] for the accepted shape patterns.
    MatMul(MatMulKind),
    /// Axis permutation.
    Transpose(Vec<usize>),
    Reshape,
    /// Per-axis (start, end, step) with end exclusive.
    Slice(Vec<(usize, usize, usize)>),
    Concat {
        axis: usize,
    },
    Add,
    Sub,
    Mul,
    Div,
    /// Elementwise maximum; gradient follows the larger input (ties to the
    /// first).
    Max,
    AddScalar(f64),
    MulScalar(f64),
    Exp,
    Log,
    Sqrt,
    Tanh,
    Sigmoid,
    Softplus,
    /// tanh-approximated GELU: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
    GeluTanh,
    ReduceSum {
        axes: Vec<usize>,
        keepdims: bool,
    },
    ReduceMean {
        axes: Vec<usize>,
        keepdims: bool,
    },
    SoftmaxLastAxis,
    /// First-order linear recurrence along axis 1:
    /// h[t] = decay[t] * h[t-1] + input[t], h[-1] = 0.
    LinearScan,
    /// Depthwise causal 1-D convolution over (batch, time, channels) with
    /// weights (channels, kernel) and bias (channels).
    CausalConv1d {
        kernel: usize,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Constant(_) => "constant",
            Op::MatMul(_) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape => "reshape",
            Op::Slice(_) => "slice",
            Op::Concat { .. } => "concat",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Max => "max",
            Op::AddScalar(_) => "add_scalar",
            Op::MulScalar(_) => "mul_scalar",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::GeluTanh => "gelu",
            Op::ReduceSum { .. } => "reduce_sum",
            Op::ReduceMean { .. } => "reduce_mean",
            Op::SoftmaxLastAxis => "softmax",
            Op::LinearScan => "linear_scan",
            Op::CausalConv1d { .. } => "causal_conv1d",
        }
    }
}

/// Shape pattern resolved for a matmul at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatMulKind {
    /// (m,k) x (k,n) -> (m,n)
    TwoD,
    /// (batch.., m, k) x (k, n) -> (batch.., m, n); shared right operand.
    BatchedLeft,
    /// (batch.., m, k) x (batch.., k, n) with equal batch dims.
    BatchedBoth,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: Vec<(String, NodeId)>,
}

/// Numpy-style broadcast of two shapes (right-aligned; 1 stretches).
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        if da == db || db == 1 {
            out[i] = da.max(db);
        } else if da == 1 {
            out[i] = db;
        } else {
            return None;
        }
    }
    Some(out)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn leaves(&self) -> &[(String, NodeId)] {
        &self.leaves
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    /// Names of trainable leaves in declaration order.
    pub fn trainable_leaves(&self) -> Vec<(String, NodeId)> {
        self.leaves
            .iter()
            .filter(|&&(_, id)| matches!(self.nodes[id].op, Op::Leaf { trainable: true, .. }))
            .cloned()
            .collect()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let id = self.nodes.len();
        for &i in &inputs {
            assert!(i < id, "op inputs must precede the op");
        }
        self.nodes.push(Node { op, inputs, shape });
        id
    }

    pub fn leaf(&mut self, name: &str, shape: &[usize], trainable: bool) -> NodeId {
        assert!(
            self.leaf_id(name).is_none(),
            "duplicate leaf name '{name}'"
        );
        let id = self.push(
            Op::Leaf {
                name: name.to_string(),
                trainable,
            },
            vec![],
            shape.to_vec(),
        );
        self.leaves.push((name.to_string(), id));
        id
    }

    pub fn constant(&mut self, values: NdArray<f64>) -> NodeId {
        let shape = values.shape().to_vec();
        self.push(Op::Constant(values), vec![], shape)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(NdArray::scalar(v))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (kind, shape) = match (sa.len(), sb.len()) {
            (2, 2) => {
                if sa[1] != sb[0] {
                    return Err(CoreError::shape("matmul", format!("{sa:?} x {sb:?}")));
                }
                (MatMulKind::TwoD, vec![sa[0], sb[1]])
            }
            (na, 2) if na > 2 => {
                if sa[na - 1] != sb[0] {
                    return Err(CoreError::shape("matmul", format!("{sa:?} x {sb:?}")));
                }
                let mut shape = sa.clone();
                shape[na - 1] = sb[1];
                (MatMulKind::BatchedLeft, shape)
            }
            (na, nb) if na == nb && na > 2 => {
                if sa[..na - 2] != sb[..nb - 2] || sa[na - 1] != sb[nb - 2] {
                    return Err(CoreError::shape("matmul", format!("{sa:?} x {sb:?}")));
                }
                let mut shape = sa.clone();
                shape[na - 1] = sb[nb - 1];
                (MatMulKind::BatchedBoth, shape)
            }
            _ => return Err(CoreError::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        Ok(self.push(Op::MatMul(kind), vec![a, b], shape))
    }

    pub fn transpose(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let s = self.shape(x);
        if perm.len() != s.len() {
            return Err(CoreError::shape("transpose", format!("perm {perm:?} for {s:?}")));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(CoreError::shape("transpose", format!("invalid perm {perm:?}")));
            }
            seen[p] = true;
        }
        let shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        Ok(self.push(Op::Transpose(perm.to_vec()), vec![x], shape))
    }

    /// Swap the last two axes.
    pub fn transpose_last2(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.shape(x).len();
        if n < 2 {
            return Err(CoreError::shape("transpose_last2", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 1, n - 2);
        self.transpose(x, &perm)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel(self.shape(x)) != numel(shape) {
            return Err(CoreError::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(x), shape),
            ));
        }
        Ok(self.push(Op::Reshape, vec![x], shape.to_vec()))
    }

    /// (start, end, step) per axis; the range list must cover every axis.
    pub fn slice(&mut self, x: NodeId, ranges: &[(usize, usize, usize)]) -> Result<NodeId> {
        let s = self.shape(x);
        if ranges.len() != s.len() {
            return Err(CoreError::shape("slice", format!("{ranges:?} for {s:?}")));
        }
        let mut shape = Vec::with_capacity(s.len());
        for (axis, &(start, end, step)) in ranges.iter().enumerate() {
            if step == 0 || end > s[axis] || start > end {
                return Err(CoreError::shape(
                    "slice",
                    format!("range {:?} invalid for axis {axis} of {s:?}", (start, end, step)),
                ));
            }
            shape.push((end - start).div_ceil(step));
        }
        Ok(self.push(Op::Slice(ranges.to_vec()), vec![x], shape))
    }

    /// Slice a single axis, keeping the rest whole.
    pub fn slice_axis(
        &mut self,
        x: NodeId,
        axis: usize,
        start: usize,
        end: usize,
        step: usize,
    ) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let mut ranges: Vec<(usize, usize, usize)> =
            s.iter().map(|&d| (0usize, d, 1usize)).collect();
        ranges[axis] = (start, end, step);
        self.slice(x, &ranges)
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(CoreError::shape("concat", "empty input list"));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(CoreError::shape("concat", format!("axis {axis} for {first:?}")));
        }
        let mut axis_len = 0usize;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() {
                return Err(CoreError::shape("concat", "rank mismatch"));
            }
            for (d, (&a, &b)) in s.iter().zip(&first).enumerate() {
                if d != axis && a != b {
                    return Err(CoreError::shape("concat", format!("{s:?} vs {first:?}")));
                }
            }
            axis_len += s[axis];
        }
        let mut shape = first;
        shape[axis] = axis_len;
        Ok(self.push(Op::Concat { axis }, xs.to_vec(), shape))
    }

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = broadcast_shapes(self.shape(a), self.shape(b)).ok_or_else(|| {
            CoreError::shape(
                op.name(),
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            )
        })?;
        Ok(self.push(op, vec![a, b], shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Div, a, b)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Max, a, b)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::AddScalar(c), vec![x], shape)
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::MulScalar(c), vec![x], shape)
    }

    fn unary(&mut self, op: Op, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(op, vec![x], shape)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp, x)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Log, x)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sqrt, x)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Softplus, x)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::GeluTanh, x)
    }

    /// SiLU (x * sigmoid(x)) as a two-node composite.
    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.sigmoid(x);
        self.mul(x, s)
    }

    fn reduce_shape(&self, x: NodeId, axes: &[usize], keepdims: bool) -> Result<Vec<usize>> {
        let s = self.shape(x);
        let mut seen = vec![false; s.len()];
        for &a in axes {
            if a >= s.len() || seen[a] {
                return Err(CoreError::shape("reduce", format!("axes {axes:?} for {s:?}")));
            }
            seen[a] = true;
        }
        let mut shape = Vec::new();
        for (d, &len) in s.iter().enumerate() {
            if seen[d] {
                if keepdims {
                    shape.push(1);
                }
            } else {
                shape.push(len);
            }
        }
        Ok(shape)
    }

    pub fn reduce_sum(&mut self, x: NodeId, axes: &[usize], keepdims: bool) -> Result<NodeId> {
        let shape = self.reduce_shape(x, axes, keepdims)?;
        Ok(self.push(
            Op::ReduceSum {
                axes: axes.to_vec(),
                keepdims,
            },
            vec![x],
            shape,
        ))
    }

    pub fn reduce_mean(&mut self, x: NodeId, axes: &[usize], keepdims: bool) -> Result<NodeId> {
        let shape = self.reduce_shape(x, axes, keepdims)?;
        Ok(self.push(
            Op::ReduceMean {
                axes: axes.to_vec(),
                keepdims,
            },
            vec![x],
            shape,
        ))
    }

    /// Sum every element down to a rank-0 scalar.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce_sum(x, &axes, false)
    }

    pub fn softmax_last_axis(&mut self, x: NodeId) -> Result<NodeId> {
        if self.shape(x).is_empty() {
            return Err(CoreError::shape("softmax", "rank-0 input"));
        }
        Ok(self.unary(Op::SoftmaxLastAxis, x))
    }

    /// h[t] = decay[t] * h[t-1] + input[t] along axis 1, zero initial state.
    pub fn linear_scan(&mut self, decay: NodeId, input: NodeId) -> Result<NodeId> {
        let (sd, si) = (self.shape(decay), self.shape(input));
        if sd != si || sd.len() < 2 {
            return Err(CoreError::shape(
                "linear_scan",
                format!("decay {sd:?} vs input {si:?} (need equal shapes, rank >= 2)"),
            ));
        }
        let shape = si.to_vec();
        Ok(self.push(Op::LinearScan, vec![decay, input], shape))
    }

    /// Depthwise causal 1-D convolution: x (B,T,C), weight (C,K), bias (C).
    pub fn causal_conv1d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(weight), self.shape(bias));
        if sx.len() != 3 || sw.len() != 2 || sb.len() != 1 || sx[2] != sw[0] || sb[0] != sw[0] {
            return Err(CoreError::shape(
                "causal_conv1d",
                format!("x {sx:?}, weight {sw:?}, bias {sb:?}"),
            ));
        }
        let kernel = sw[1];
        let shape = sx.to_vec();
        Ok(self.push(Op::CausalConv1d { kernel }, vec![x, weight, bias], shape))
    }
}
