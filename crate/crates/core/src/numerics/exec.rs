//! Graph execution: forward evaluation and reverse-mode differentiation.
//!
//! A [`GraphExec`] owns preallocated value/gradient buffers for one graph, so
//! repeated execution (a training loop) does not allocate. Execution is
//! single-threaded and, for a fixed binary and machine, bit-reproducible:
//! every kernel iterates in a fixed order and the GEMM backend blocks by
//! shape only.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::numerics::array::{numel, strides_of, NdArray, Real};
use crate::numerics::graph::{Graph, MatMulKind, NodeId, Op};

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Source of leaf values for a forward pass.
pub trait BindingSource<F: Real> {
    fn lookup(&self, name: &str) -> Option<&NdArray<F>>;
}

impl<F: Real> BindingSource<F> for BTreeMap<String, NdArray<F>> {
    fn lookup(&self, name: &str) -> Option<&NdArray<F>> {
        self.get(name)
    }
}

impl<F: Real> BindingSource<F> for [(&str, &NdArray<F>)] {
    fn lookup(&self, name: &str) -> Option<&NdArray<F>> {
        self.iter().find(|(n, _)| *n == name).map(|&(_, a)| a)
    }
}

/// Two binding sources layered; the first takes precedence.
pub struct Layered<'a, A, B>(pub &'a A, pub &'a B);

impl<F: Real, A: BindingSource<F>, B: BindingSource<F>> BindingSource<F> for Layered<'_, A, B> {
    fn lookup(&self, name: &str) -> Option<&NdArray<F>> {
        self.0.lookup(name).or_else(|| self.1.lookup(name))
    }
}

/// Reusable executor for one graph at one element type.
pub struct GraphExec<F: Real> {
    graph: Arc<Graph>,
    values: Vec<NdArray<F>>,
    grads: Vec<NdArray<F>>,
    aux: Vec<Option<NdArray<F>>>,
    needs_grad: Vec<bool>,
    grad_written: Vec<bool>,
    /// Nodes whose forward already ran (constants are filled at build).
    check_finite: bool,
}

impl<F: Real> GraphExec<F> {
    pub fn new(graph: Arc<Graph>) -> Self {
        let n = graph.len();
        let mut values = Vec::with_capacity(n);
        let mut needs_grad = vec![false; n];
        for (id, node) in graph.nodes().iter().enumerate() {
            let mut v = NdArray::zeros(&node.shape);
            match &node.op {
                Op::Constant(c) => v = c.cast(),
                Op::Leaf { trainable, .. } => needs_grad[id] = *trainable,
                _ => {
                    needs_grad[id] = node.inputs.iter().any(|&i| needs_grad[i]);
                }
            }
            values.push(v);
        }
        let grads = graph
            .nodes()
            .iter()
            .enumerate()
            .map(|(id, node)| {
                if needs_grad[id] {
                    NdArray::zeros(&node.shape)
                } else {
                    NdArray::zeros(&[0])
                }
            })
            .collect();
        GraphExec {
            aux: vec![None; n],
            grads,
            needs_grad,
            grad_written: vec![false; n],
            values,
            graph,
            check_finite: true,
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn value(&self, id: NodeId) -> &NdArray<F> {
        &self.values[id]
    }

    pub fn grad(&self, id: NodeId) -> &NdArray<F> {
        &self.grads[id]
    }

    /// Gradient for a leaf, all-zeros if the leaf never received one.
    pub fn leaf_grad(&self, id: NodeId) -> NdArray<F> {
        if self.needs_grad[id] && self.grad_written[id] {
            self.grads[id].clone()
        } else {
            NdArray::zeros(self.graph.shape(id))
        }
    }

    /// Run every node in topological order with the given leaf bindings.
    pub fn forward(&mut self, bindings: &impl BindingSource<F>) -> Result<()> {
        self.forward_upto(bindings, self.graph.len().saturating_sub(1))
    }

    /// Run nodes `0..=upto`.
    pub fn forward_upto(&mut self, bindings: &impl BindingSource<F>, upto: NodeId) -> Result<()> {
        for id in 0..=upto {
            let node = &self.graph.nodes()[id];
            match &node.op {
                Op::Leaf { name, .. } => {
                    let src = bindings
                        .lookup(name)
                        .ok_or_else(|| CoreError::MissingBinding(name.clone()))?;
                    if src.shape() != node.shape.as_slice() {
                        return Err(CoreError::shape(
                            format!("binding '{name}'"),
                            format!("expected {:?}, got {:?}", node.shape, src.shape()),
                        ));
                    }
                    self.values[id].data_mut().copy_from_slice(src.data());
                }
                Op::Constant(_) => {}
                _ => {
                    let (before, rest) = self.values.split_at_mut(id);
                    let out = &mut rest[0];
                    let get = |i: NodeId| -> &NdArray<F> { &before[i] };
                    let aux = forward_kernel(&node.op, &node.inputs, get, out)?;
                    self.aux[id] = aux;
                }
            }
            if self.check_finite && !self.values[id].probably_finite() {
                let index = self.values[id].first_non_finite().unwrap_or(0);
                return Err(CoreError::NonFinite {
                    node: id,
                    op: node.op.name().to_string(),
                    index,
                });
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar output. Must follow a `forward` on the
    /// same bindings. Afterwards `leaf_grad` holds d(output)/d(leaf) for each
    /// trainable leaf.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if numel(self.graph.shape(output)) != 1 {
            return Err(CoreError::NonScalarOutput(self.graph.shape(output).to_vec()));
        }
        if !self.needs_grad[output] {
            // Output does not depend on any trainable leaf; all grads zero.
            self.grad_written.fill(false);
            return Ok(());
        }
        self.grad_written.fill(false);
        self.grads[output].fill(F::one());
        self.grad_written[output] = true;

        for id in (0..=output).rev() {
            if !self.needs_grad[id] || !self.grad_written[id] {
                continue;
            }
            let node = &self.graph.nodes()[id];
            if matches!(node.op, Op::Leaf { .. } | Op::Constant(_)) {
                continue;
            }
            let go = std::mem::take(&mut self.grads[id]);
            let out_aux = std::mem::take(&mut self.aux[id]);
            for (slot, &inp) in node.inputs.iter().enumerate() {
                if !self.needs_grad[inp] {
                    continue;
                }
                if !self.grad_written[inp] {
                    self.grads[inp].fill(F::zero());
                    self.grad_written[inp] = true;
                }
                let gin = std::mem::take(&mut self.grads[inp]);
                let gin = {
                    let values = &self.values;
                    backward_kernel(
                        &node.op,
                        slot,
                        &node.inputs,
                        &go,
                        |i| &values[i],
                        &values[id],
                        out_aux.as_ref(),
                        gin,
                    )
                };
                self.grads[inp] = gin;
            }
            self.aux[id] = out_aux;
            self.grads[id] = go;
        }

        // Non-finite gradients abort like non-finite values do.
        for (name, id) in self.graph.trainable_leaves() {
            if self.grad_written[id] && !self.grads[id].probably_finite() {
                let index = self.grads[id].first_non_finite().unwrap_or(0);
                return Err(CoreError::NonFinite {
                    node: id,
                    op: format!("grad of leaf '{name}'"),
                    index,
                });
            }
        }
        Ok(())
    }
}

/// One-shot forward of selected outputs; see [`GraphExec`] for the reusable
/// form.
pub fn forward_graph<F: Real>(
    graph: &Arc<Graph>,
    bindings: &impl BindingSource<F>,
    outputs: &[NodeId],
) -> Result<Vec<NdArray<F>>> {
    let mut exec = GraphExec::new(Arc::clone(graph));
    exec.forward(bindings)?;
    Ok(outputs.iter().map(|&id| exec.value(id).clone()).collect())
}

/// One-shot backward: gradients of a scalar output for every trainable leaf.
/// Leaves the output never touches get zero gradients.
pub fn backward_graph<F: Real>(
    graph: &Arc<Graph>,
    bindings: &impl BindingSource<F>,
    output: NodeId,
) -> Result<BTreeMap<String, NdArray<F>>> {
    let mut exec = GraphExec::new(Arc::clone(graph));
    exec.forward(bindings)?;
    exec.backward(output)?;
    Ok(graph
        .trainable_leaves()
        .into_iter()
        .map(|(name, id)| (name, exec.leaf_grad(id)))
        .collect())
}

// ---------------------------------------------------------------------------
// strided iteration helpers
// ---------------------------------------------------------------------------

/// Strides of `shape` viewed through `out_shape` (right-aligned), 0 where the
/// axis is broadcast.
fn bcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = strides_of(shape);
    let pad = out_shape.len() - shape.len();
    let mut out = vec![0usize; out_shape.len()];
    for i in 0..shape.len() {
        out[pad + i] = if shape[i] == 1 && out_shape[pad + i] != 1 {
            0
        } else {
            strides[i]
        };
    }
    out
}

/// Odometer over all axes but the last; yields base offsets for up to three
/// strided operands.
struct Outer {
    dims: Vec<usize>,
    idx: Vec<usize>,
    first: bool,
}

impl Outer {
    fn new(out_shape: &[usize]) -> Self {
        let dims = if out_shape.is_empty() {
            vec![]
        } else {
            out_shape[..out_shape.len() - 1].to_vec()
        };
        Outer {
            idx: vec![0; dims.len()],
            dims,
            first: true,
        }
    }

    /// Advance and update offsets; returns false when exhausted.
    fn step(&mut self, offs: &mut [usize], strides: &[&[usize]]) -> bool {
        if self.first {
            self.first = false;
            return true;
        }
        let n = self.dims.len();
        for axis in (0..n).rev() {
            self.idx[axis] += 1;
            if self.idx[axis] < self.dims[axis] {
                for (o, s) in offs.iter_mut().zip(strides) {
                    *o += s[axis];
                }
                return true;
            }
            self.idx[axis] = 0;
            for (o, s) in offs.iter_mut().zip(strides) {
                *o -= s[axis] * (self.dims[axis] - 1);
            }
        }
        false
    }
}

// ---------------------------------------------------------------------------
// forward kernels
// ---------------------------------------------------------------------------

fn forward_kernel<'a, F: Real>(
    op: &Op,
    inputs: &[NodeId],
    get: impl Fn(NodeId) -> &'a NdArray<F>,
    out: &mut NdArray<F>,
) -> Result<Option<NdArray<F>>> {
    match op {
        Op::Leaf { .. } | Op::Constant(_) => unreachable!("handled by caller"),
        Op::MatMul(kind) => {
            matmul_forward(*kind, get(inputs[0]), get(inputs[1]), out);
        }
        Op::Transpose(perm) => {
            let x = get(inputs[0]);
            let in_strides = x.strides();
            let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
            strided_gather(x.data(), 0, &gather, out);
        }
        Op::Reshape => {
            out.data_mut().copy_from_slice(get(inputs[0]).data());
        }
        Op::Slice(ranges) => {
            let x = get(inputs[0]);
            let in_strides = x.strides();
            let base: usize = ranges
                .iter()
                .zip(&in_strides)
                .map(|(&(start, _, _), s)| start * s)
                .sum();
            let gather: Vec<usize> = ranges
                .iter()
                .zip(&in_strides)
                .map(|(&(_, _, step), s)| step * s)
                .collect();
            strided_gather(x.data(), base, &gather, out);
        }
        Op::Concat { axis } => {
            let shape = out.shape().to_vec();
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..*axis].iter().product();
            let total_axis = shape[*axis];
            let mut off = 0usize;
            for &inp in inputs {
                let x = get(inp);
                let len = x.shape()[*axis];
                for o in 0..outer {
                    let src = &x.data()[o * len * inner..(o + 1) * len * inner];
                    let dst_start = (o * total_axis + off) * inner;
                    out.data_mut()[dst_start..dst_start + len * inner].copy_from_slice(src);
                }
                off += len;
            }
        }
        Op::Add => binary_forward(get(inputs[0]), get(inputs[1]), out, |a, b| a + b),
        Op::Sub => binary_forward(get(inputs[0]), get(inputs[1]), out, |a, b| a - b),
        Op::Mul => binary_forward(get(inputs[0]), get(inputs[1]), out, |a, b| a * b),
        Op::Div => binary_forward(get(inputs[0]), get(inputs[1]), out, |a, b| a / b),
        Op::Max => binary_forward(get(inputs[0]), get(inputs[1]), out, |a, b| {
            if a >= b {
                a
            } else {
                b
            }
        }),
        Op::AddScalar(c) => {
            let c = F::from_f64(*c);
            unary_forward(get(inputs[0]), out, |x| x + c);
        }
        Op::MulScalar(c) => {
            let c = F::from_f64(*c);
            unary_forward(get(inputs[0]), out, |x| x * c);
        }
        Op::Exp => unary_forward(get(inputs[0]), out, |x| x.exp()),
        Op::Log => unary_forward(get(inputs[0]), out, |x| x.ln()),
        Op::Sqrt => unary_forward(get(inputs[0]), out, |x| x.sqrt()),
        Op::Tanh => unary_forward(get(inputs[0]), out, |x| x.tanh()),
        Op::Sigmoid => unary_forward(get(inputs[0]), out, sigmoid),
        Op::Softplus => unary_forward(get(inputs[0]), out, softplus),
        Op::GeluTanh => {
            let x = get(inputs[0]);
            let mut aux = NdArray::zeros(x.shape());
            let half = F::from_f64(0.5);
            let one = F::one();
            let two = F::from_f64(2.0);
            let c0 = F::from_f64(GELU_C0);
            let a = F::from_f64(GELU_A);
            for ((y, t), &v) in out
                .data_mut()
                .iter_mut()
                .zip(aux.data_mut())
                .zip(x.data())
            {
                let u = c0 * (v + a * v * v * v);
                // tanh(u) = 1 - 2/(exp(2u) + 1); exp saturates cleanly at ±1.
                let th = one - two / ((u * two).exp() + one);
                *t = th;
                *y = half * v * (one + th);
            }
            return Ok(Some(aux));
        }
        Op::ReduceSum { axes, keepdims } => {
            reduce_forward(get(inputs[0]), out, axes, *keepdims, false);
        }
        Op::ReduceMean { axes, keepdims } => {
            reduce_forward(get(inputs[0]), out, axes, *keepdims, true);
        }
        Op::SoftmaxLastAxis => {
            let x = get(inputs[0]);
            let row = *x.shape().last().unwrap_or(&1);
            if row == 0 {
                return Ok(None);
            }
            for (src, dst) in x.data().chunks(row).zip(out.data_mut().chunks_mut(row)) {
                let mut m = src[0];
                for &v in src {
                    if v > m {
                        m = v;
                    }
                }
                let mut sum = F::zero();
                for (d, &v) in dst.iter_mut().zip(src) {
                    let e = (v - m).exp();
                    *d = e;
                    sum += e;
                }
                let inv = F::one() / sum;
                for d in dst.iter_mut() {
                    *d *= inv;
                }
            }
        }
        Op::LinearScan => {
            let decay = get(inputs[0]);
            let input = get(inputs[1]);
            let shape = input.shape();
            let (d0, t_len) = (shape[0], shape[1]);
            let rest: usize = shape[2..].iter().product();
            let (a, x, h) = (decay.data(), input.data(), out.data_mut());
            for b in 0..d0 {
                let base = b * t_len * rest;
                h[base..base + rest].copy_from_slice(&x[base..base + rest]);
                for t in 1..t_len {
                    let cur = base + t * rest;
                    let prev = cur - rest;
                    for r in 0..rest {
                        h[cur + r] = a[cur + r] * h[prev + r] + x[cur + r];
                    }
                }
            }
        }
        Op::CausalConv1d { kernel } => {
            let x = get(inputs[0]);
            let w = get(inputs[1]);
            let bias = get(inputs[2]);
            let (b_len, t_len, c_len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let k = *kernel;
            let (xd, wd, bd, yd) = (x.data(), w.data(), bias.data(), out.data_mut());
            for b in 0..b_len {
                for t in 0..t_len {
                    let yo = (b * t_len + t) * c_len;
                    yd[yo..yo + c_len].copy_from_slice(bd);
                    for j in 0..k {
                        let ti = t as isize + j as isize - (k as isize - 1);
                        if ti < 0 {
                            continue;
                        }
                        let xo = (b * t_len + ti as usize) * c_len;
                        for c in 0..c_len {
                            yd[yo + c] += wd[c * k + j] * xd[xo + c];
                        }
                    }
                }
            }
        }
    }
    Ok(None)
}

fn sigmoid<F: Real>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

fn softplus<F: Real>(x: F) -> F {
    // max(x, 0) + ln(1 + exp(-|x|)) is stable for large |x|.
    let zero = F::zero();
    let m = if x > zero { x } else { zero };
    m + (F::one() + (-x.abs()).exp()).ln()
}

fn unary_forward<F: Real>(x: &NdArray<F>, out: &mut NdArray<F>, f: impl Fn(F) -> F) {
    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
        *o = f(v);
    }
}

fn binary_forward<F: Real>(
    a: &NdArray<F>,
    b: &NdArray<F>,
    out: &mut NdArray<F>,
    f: impl Fn(F, F) -> F,
) {
    if a.shape() == b.shape() {
        for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
            *o = f(x, y);
        }
        return;
    }
    let out_shape = out.shape().to_vec();
    let sa = bcast_strides(a.shape(), &out_shape);
    let sb = bcast_strides(b.shape(), &out_shape);
    let inner = *out_shape.last().unwrap_or(&1);
    let (ia, ib) = (
        *sa.last().unwrap_or(&0),
        *sb.last().unwrap_or(&0),
    );
    let (sa_outer, sb_outer) = (
        &sa[..sa.len().saturating_sub(1)],
        &sb[..sb.len().saturating_sub(1)],
    );
    let (ad, bd, od) = (a.data(), b.data(), out.data_mut());
    let mut offs = [0usize, 0usize];
    let mut outer = Outer::new(&out_shape);
    let mut oo = 0usize;
    while outer.step(&mut offs, &[sa_outer, sb_outer]) {
        let (oa, ob) = (offs[0], offs[1]);
        let or = &mut od[oo..oo + inner];
        match (ia, ib) {
            (1, 1) => {
                let ar = &ad[oa..oa + inner];
                let br = &bd[ob..ob + inner];
                for ((o, &x), &y) in or.iter_mut().zip(ar).zip(br) {
                    *o = f(x, y);
                }
            }
            (1, 0) => {
                let y = bd[ob];
                let ar = &ad[oa..oa + inner];
                for (o, &x) in or.iter_mut().zip(ar) {
                    *o = f(x, y);
                }
            }
            (0, 1) => {
                let x = ad[oa];
                let br = &bd[ob..ob + inner];
                for (o, &y) in or.iter_mut().zip(br) {
                    *o = f(x, y);
                }
            }
            _ => {
                let v = f(ad[oa], bd[ob]);
                or.fill(v);
            }
        }
        oo += inner;
    }
}

/// out[linear] = src[base + sum(idx * gather_strides)] over out's index space.
fn strided_gather<F: Real>(src: &[F], base: usize, gather: &[usize], out: &mut NdArray<F>) {
    let out_shape = out.shape().to_vec();
    let od = out.data_mut();
    if out_shape.is_empty() {
        od[0] = src[base];
        return;
    }
    let inner = *out_shape.last().unwrap();
    let istride = *gather.last().unwrap();
    let outer_strides = &gather[..gather.len() - 1];
    let mut offs = [base];
    let mut outer = Outer::new(&out_shape);
    let mut oo = 0usize;
    while outer.step(&mut offs, &[outer_strides]) {
        let mut s = offs[0];
        if istride == 1 {
            od[oo..oo + inner].copy_from_slice(&src[s..s + inner]);
        } else {
            for i in 0..inner {
                od[oo + i] = src[s];
                s += istride;
            }
        }
        oo += inner;
    }
}

/// dst[base + sum(idx * strides)] += src[linear] over src's index space.
fn strided_scatter_add<F: Real>(src: &NdArray<F>, base: usize, gather: &[usize], dst: &mut [F]) {
    let src_shape = src.shape();
    let sd = src.data();
    if src_shape.is_empty() {
        dst[base] += sd[0];
        return;
    }
    let inner = *src_shape.last().unwrap();
    let istride = *gather.last().unwrap();
    let outer_strides = &gather[..gather.len() - 1];
    let mut offs = [base];
    let mut outer = Outer::new(src_shape);
    let mut oo = 0usize;
    while outer.step(&mut offs, &[outer_strides]) {
        let mut s = offs[0];
        for i in 0..inner {
            dst[s] += sd[oo + i];
            s += istride;
        }
        oo += inner;
    }
}

fn reduce_forward<F: Real>(
    x: &NdArray<F>,
    out: &mut NdArray<F>,
    axes: &[usize],
    keepdims: bool,
    mean: bool,
) {
    let in_shape = x.shape().to_vec();
    let count: usize = axes.iter().map(|&a| in_shape[a]).product();
    // Strides into `out` for each input axis (0 on reduced axes).
    let scatter = reduce_scatter_strides(&in_shape, axes, keepdims, out.shape());
    out.fill(F::zero());
    let od = out.data_mut();
    let xd = x.data();
    if in_shape.is_empty() {
        od[0] = xd[0];
    } else {
        let inner = *in_shape.last().unwrap();
        let istride = *scatter.last().unwrap();
        let outer_strides = &scatter[..scatter.len() - 1];
        let mut offs = [0usize];
        let mut outer = Outer::new(&in_shape);
        let mut io = 0usize;
        while outer.step(&mut offs, &[outer_strides]) {
            let mut o = offs[0];
            if istride == 0 {
                let mut acc = F::zero();
                for i in 0..inner {
                    acc += xd[io + i];
                }
                od[o] += acc;
            } else {
                for i in 0..inner {
                    od[o] += xd[io + i];
                    o += istride;
                }
            }
            io += inner;
        }
    }
    if mean && count > 0 {
        let inv = F::one() / F::from_f64(count as f64);
        for v in od.iter_mut() {
            *v *= inv;
        }
    }
}

fn reduce_scatter_strides(
    in_shape: &[usize],
    axes: &[usize],
    keepdims: bool,
    out_shape: &[usize],
) -> Vec<usize> {
    let out_strides = strides_of(out_shape);
    let mut scatter = vec![0usize; in_shape.len()];
    let mut out_axis = 0usize;
    for (d, stride) in scatter.iter_mut().enumerate() {
        if axes.contains(&d) {
            if keepdims {
                out_axis += 1; // reduced axis kept as extent 1, stride irrelevant
            }
        } else {
            *stride = out_strides[out_axis];
            out_axis += 1;
        }
    }
    scatter
}

fn matmul_forward<F: Real>(kind: MatMulKind, a: &NdArray<F>, b: &NdArray<F>, out: &mut NdArray<F>) {
    let (sa, sb) = (a.shape(), b.shape());
    match kind {
        MatMulKind::TwoD => {
            gemm(
                sa[0], sa[1], sb[1],
                a.data(), b.data(), out.data_mut(),
                F::zero(),
            );
        }
        MatMulKind::BatchedLeft => {
            let k = *sa.last().unwrap();
            let m = a.numel() / k;
            gemm(m, k, sb[1], a.data(), b.data(), out.data_mut(), F::zero());
        }
        MatMulKind::BatchedBoth => {
            let nd = sa.len();
            let (m, k, n) = (sa[nd - 2], sa[nd - 1], sb[nd - 1]);
            let batch: usize = sa[..nd - 2].iter().product();
            for i in 0..batch {
                gemm(
                    m, k, n,
                    &a.data()[i * m * k..(i + 1) * m * k],
                    &b.data()[i * k * n..(i + 1) * k * n],
                    &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                    F::zero(),
                );
            }
        }
    }
}

fn gemm<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], beta: F) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == F::zero() {
            c.fill(F::zero());
        }
        return;
    }
    unsafe {
        F::gemm(
            m, k, n,
            F::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// C += A^T(m,k as k,m) * B or similar transposed products, strides chosen by
/// caller.
#[allow(clippy::too_many_arguments)]
fn gemm_strided<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    rsa: isize,
    csa: isize,
    b: &[F],
    rsb: isize,
    csb: isize,
    c: &mut [F],
    beta: F,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        F::gemm(
            m, k, n,
            F::one(),
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

// ---------------------------------------------------------------------------
// backward kernels
// ---------------------------------------------------------------------------

/// Accumulate d(output)/d(inputs[slot]) into `gin` and return it.
#[allow(clippy::too_many_arguments)]
fn backward_kernel<'a, F: Real>(
    op: &Op,
    slot: usize,
    inputs: &[NodeId],
    go: &NdArray<F>,
    get: impl Fn(NodeId) -> &'a NdArray<F>,
    out_val: &NdArray<F>,
    aux: Option<&NdArray<F>>,
    mut gin: NdArray<F>,
) -> NdArray<F> {
    match op {
        Op::Leaf { .. } | Op::Constant(_) => {}
        Op::MatMul(kind) => {
            matmul_backward(*kind, slot, get(inputs[0]), get(inputs[1]), go, &mut gin)
        }
        Op::Transpose(perm) => {
            // gin[orig] += go[permuted]: walk go's index space scattering into gin.
            let in_strides = gin.strides();
            let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
            strided_scatter_add(go, 0, &gather, gin.data_mut());
        }
        Op::Reshape => {
            for (g, &v) in gin.data_mut().iter_mut().zip(go.data()) {
                *g += v;
            }
        }
        Op::Slice(ranges) => {
            let in_strides = gin.strides();
            let base: usize = ranges
                .iter()
                .zip(&in_strides)
                .map(|(&(start, _, _), s)| start * s)
                .sum();
            let gather: Vec<usize> = ranges
                .iter()
                .zip(&in_strides)
                .map(|(&(_, _, step), s)| step * s)
                .collect();
            strided_scatter_add(go, base, &gather, gin.data_mut());
        }
        Op::Concat { axis } => {
            let out_shape = go.shape().to_vec();
            let inner: usize = out_shape[*axis + 1..].iter().product();
            let outer: usize = out_shape[..*axis].iter().product();
            let total_axis = out_shape[*axis];
            let off: usize = inputs[..slot].iter().map(|&i| get(i).shape()[*axis]).sum();
            let len = gin.shape()[*axis];
            for o in 0..outer {
                let src_start = (o * total_axis + off) * inner;
                let dst_start = o * len * inner;
                for i in 0..len * inner {
                    gin.data_mut()[dst_start + i] += go.data()[src_start + i];
                }
            }
        }
        Op::Add => binary_backward_into(go, &mut gin, BinKind::Add, slot, get(inputs[0]), get(inputs[1])),
        Op::Sub => binary_backward_into(go, &mut gin, BinKind::Sub, slot, get(inputs[0]), get(inputs[1])),
        Op::Mul => binary_backward_into(go, &mut gin, BinKind::Mul, slot, get(inputs[0]), get(inputs[1])),
        Op::Div => binary_backward_into(go, &mut gin, BinKind::Div, slot, get(inputs[0]), get(inputs[1])),
        Op::Max => binary_backward_into(go, &mut gin, BinKind::Max, slot, get(inputs[0]), get(inputs[1])),
        Op::AddScalar(_) => {
            for (g, &v) in gin.data_mut().iter_mut().zip(go.data()) {
                *g += v;
            }
        }
        Op::MulScalar(c) => {
            let c = F::from_f64(*c);
            for (g, &v) in gin.data_mut().iter_mut().zip(go.data()) {
                *g += v * c;
            }
        }
        Op::Exp => {
            for ((g, &v), &y) in gin.data_mut().iter_mut().zip(go.data()).zip(out_val.data()) {
                *g += v * y;
            }
        }
        Op::Log => {
            let x = get(inputs[0]);
            for ((g, &v), &xv) in gin.data_mut().iter_mut().zip(go.data()).zip(x.data()) {
                *g += v / xv;
            }
        }
        Op::Sqrt => {
            let half = F::from_f64(0.5);
            for ((g, &v), &y) in gin.data_mut().iter_mut().zip(go.data()).zip(out_val.data()) {
                *g += v * half / y;
            }
        }
        Op::Tanh => {
            let one = F::one();
            for ((g, &v), &y) in gin.data_mut().iter_mut().zip(go.data()).zip(out_val.data()) {
                *g += v * (one - y * y);
            }
        }
        Op::Sigmoid => {
            let one = F::one();
            for ((g, &v), &y) in gin.data_mut().iter_mut().zip(go.data()).zip(out_val.data()) {
                *g += v * y * (one - y);
            }
        }
        Op::Softplus => {
            let x = get(inputs[0]);
            for ((g, &v), &xv) in gin.data_mut().iter_mut().zip(go.data()).zip(x.data()) {
                *g += v * sigmoid(xv);
            }
        }
        Op::GeluTanh => {
            let x = get(inputs[0]);
            let t = aux.expect("gelu aux stored in forward");
            let half = F::from_f64(0.5);
            let one = F::one();
            let c0 = F::from_f64(GELU_C0);
            let a3 = F::from_f64(3.0 * GELU_A);
            for (((g, &v), &xv), &th) in gin
                .data_mut()
                .iter_mut()
                .zip(go.data())
                .zip(x.data())
                .zip(t.data())
            {
                let du = c0 * (one + a3 * xv * xv);
                let d = half * (one + th) + half * xv * (one - th * th) * du;
                *g += v * d;
            }
        }
        Op::ReduceSum { axes, keepdims } => {
            let scatter = reduce_scatter_strides(gin.shape(), axes, *keepdims, go.shape());
            spread_add(go, &scatter, &mut gin, F::one());
        }
        Op::ReduceMean { axes, keepdims } => {
            let count: usize = axes.iter().map(|&a| gin.shape()[a]).product();
            let scatter = reduce_scatter_strides(gin.shape(), axes, *keepdims, go.shape());
            spread_add(go, &scatter, &mut gin, F::one() / F::from_f64(count as f64));
        }
        Op::SoftmaxLastAxis => {
            let y = out_val;
            let row = *y.shape().last().unwrap_or(&1);
            for ((gr, yr), gor) in gin
                .data_mut()
                .chunks_mut(row)
                .zip(y.data().chunks(row))
                .zip(go.data().chunks(row))
            {
                let mut dot = F::zero();
                for (&g, &yv) in gor.iter().zip(yr) {
                    dot += g * yv;
                }
                for ((gi, &g), &yv) in gr.iter_mut().zip(gor).zip(yr) {
                    *gi += yv * (g - dot);
                }
            }
        }
        Op::LinearScan => {
            let decay = get(inputs[0]);
            let shape = decay.shape();
            let (d0, t_len) = (shape[0], shape[1]);
            let rest: usize = shape[2..].iter().product();
            let (a, h, g) = (decay.data(), out_val.data(), go.data());
            let gd = gin.data_mut();
            let mut hat = vec![F::zero(); rest];
            for b in 0..d0 {
                let base = b * t_len * rest;
                for r in 0..rest {
                    hat[r] = g[base + (t_len - 1) * rest + r];
                }
                for t in (0..t_len).rev() {
                    let cur = base + t * rest;
                    match slot {
                        // d/d decay[t] = hat[t] * h[t-1]
                        0 => {
                            if t > 0 {
                                let prev = cur - rest;
                                for r in 0..rest {
                                    gd[cur + r] += hat[r] * h[prev + r];
                                }
                            }
                        }
                        // d/d input[t] = hat[t]
                        _ => {
                            for r in 0..rest {
                                gd[cur + r] += hat[r];
                            }
                        }
                    }
                    if t > 0 {
                        let prev = cur - rest;
                        for r in 0..rest {
                            hat[r] = g[prev + r] + a[cur + r] * hat[r];
                        }
                    }
                }
            }
        }
        Op::CausalConv1d { kernel } => {
            let x = get(inputs[0]);
            let w = get(inputs[1]);
            let (b_len, t_len, c_len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let k = *kernel;
            let gd = gin.data_mut();
            match slot {
                0 => {
                    // dx[b,ti,c] += sum_j go[b, ti + K-1 - j, c] * w[c,j]
                    let (god, wd) = (go.data(), w.data());
                    for b in 0..b_len {
                        for t in 0..t_len {
                            let goo = (b * t_len + t) * c_len;
                            for j in 0..k {
                                let ti = t as isize + j as isize - (k as isize - 1);
                                if ti < 0 {
                                    continue;
                                }
                                let xo = (b * t_len + ti as usize) * c_len;
                                for c in 0..c_len {
                                    gd[xo + c] += god[goo + c] * wd[c * k + j];
                                }
                            }
                        }
                    }
                }
                1 => {
                    let (god, xd) = (go.data(), x.data());
                    for b in 0..b_len {
                        for t in 0..t_len {
                            let goo = (b * t_len + t) * c_len;
                            for j in 0..k {
                                let ti = t as isize + j as isize - (k as isize - 1);
                                if ti < 0 {
                                    continue;
                                }
                                let xo = (b * t_len + ti as usize) * c_len;
                                for c in 0..c_len {
                                    gd[c * k + j] += god[goo + c] * xd[xo + c];
                                }
                            }
                        }
                    }
                }
                _ => {
                    let god = go.data();
                    for bt in 0..b_len * t_len {
                        let goo = bt * c_len;
                        for c in 0..c_len {
                            gd[c] += god[goo + c];
                        }
                    }
                }
            }
        }
    }
    gin
}

/// gin[strided] += scale * go[linear] over go's index space (reduce backward).
fn spread_add<F: Real>(go: &NdArray<F>, scatter: &[usize], gin: &mut NdArray<F>, scale: F) {
    // scatter maps INPUT axes to OUT strides; we walk gin's index space and
    // read from go.
    let in_shape = gin.shape().to_vec();
    let gd = gin.data_mut();
    let god = go.data();
    if in_shape.is_empty() {
        gd[0] += scale * god[0];
        return;
    }
    let inner = *in_shape.last().unwrap();
    let istride = *scatter.last().unwrap();
    let outer_strides = &scatter[..scatter.len() - 1];
    let mut offs = [0usize];
    let mut outer = Outer::new(&in_shape);
    let mut io = 0usize;
    while outer.step(&mut offs, &[outer_strides]) {
        let mut o = offs[0];
        if istride == 0 {
            let v = scale * god[o];
            for i in 0..inner {
                gd[io + i] += v;
            }
        } else {
            for i in 0..inner {
                gd[io + i] += scale * god[o];
                o += istride;
            }
        }
        io += inner;
    }
}

enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

fn binary_backward_into<F: Real>(
    go: &NdArray<F>,
    gin: &mut NdArray<F>,
    kind: BinKind,
    slot: usize,
    a: &NdArray<F>,
    b: &NdArray<F>,
) {
    // Dispatch once; each case runs a monomorphized strided walk.
    match (kind, slot) {
        (BinKind::Add, _) => bwd_walk(go, gin, a, b, |g, _x, _y| Some(g)),
        (BinKind::Sub, 0) => bwd_walk(go, gin, a, b, |g, _x, _y| Some(g)),
        (BinKind::Sub, _) => bwd_walk(go, gin, a, b, |g, _x, _y| Some(-g)),
        (BinKind::Mul, 0) => bwd_walk(go, gin, a, b, |g, _x, y| Some(g * y)),
        (BinKind::Mul, _) => bwd_walk(go, gin, a, b, |g, x, _y| Some(g * x)),
        (BinKind::Div, 0) => bwd_walk(go, gin, a, b, |g, _x, y| Some(g / y)),
        (BinKind::Div, _) => bwd_walk(go, gin, a, b, |g, x, y| Some(-g * x / (y * y))),
        (BinKind::Max, 0) => bwd_walk(go, gin, a, b, |g, x, y| if x >= y { Some(g) } else { None }),
        (BinKind::Max, _) => bwd_walk(go, gin, a, b, |g, x, y| if x < y { Some(g) } else { None }),
    }
}

#[inline]
fn bwd_walk<F: Real>(
    go: &NdArray<F>,
    gin: &mut NdArray<F>,
    a: &NdArray<F>,
    b: &NdArray<F>,
    contrib: impl Fn(F, F, F) -> Option<F>,
) {
    let out_shape = go.shape().to_vec();
    let (ad, bd) = (a.data(), b.data());
    let god = go.data();

    // Contiguous fast path: everything matches the output shape.
    if a.shape() == out_shape.as_slice()
        && b.shape() == out_shape.as_slice()
        && gin.shape() == out_shape.as_slice()
    {
        let gd = gin.data_mut();
        for (((t, &g), &x), &y) in gd.iter_mut().zip(god).zip(ad).zip(bd) {
            if let Some(d) = contrib(g, x, y) {
                *t += d;
            }
        }
        return;
    }

    let sa = bcast_strides(a.shape(), &out_shape);
    let sb = bcast_strides(b.shape(), &out_shape);
    let sg = bcast_strides(gin.shape(), &out_shape);
    let inner = *out_shape.last().unwrap_or(&1);
    let (ia, ib, ig) = (
        *sa.last().unwrap_or(&0),
        *sb.last().unwrap_or(&0),
        *sg.last().unwrap_or(&0),
    );
    let (sa_o, sb_o, sg_o) = (
        &sa[..sa.len().saturating_sub(1)],
        &sb[..sb.len().saturating_sub(1)],
        &sg[..sg.len().saturating_sub(1)],
    );
    let gd = gin.data_mut();
    let mut offs = [0usize, 0usize, 0usize];
    let mut outer = Outer::new(&out_shape);
    let mut oo = 0usize;
    while outer.step(&mut offs, &[sa_o, sb_o, sg_o]) {
        let (oa, ob, og) = (offs[0], offs[1], offs[2]);
        let gor = &god[oo..oo + inner];
        if (ia, ib, ig) == (1, 1, 1) {
            let ar = &ad[oa..oa + inner];
            let br = &bd[ob..ob + inner];
            let gr = &mut gd[og..og + inner];
            for (((t, &g), &x), &y) in gr.iter_mut().zip(gor).zip(ar).zip(br) {
                if let Some(d) = contrib(g, x, y) {
                    *t += d;
                }
            }
        } else {
            for (i, &g) in gor.iter().enumerate() {
                if let Some(d) = contrib(g, ad[oa + i * ia], bd[ob + i * ib]) {
                    gd[og + i * ig] += d;
                }
            }
        }
        oo += inner;
    }
}

fn matmul_backward<F: Real>(
    kind: MatMulKind,
    slot: usize,
    a: &NdArray<F>,
    b: &NdArray<F>,
    go: &NdArray<F>,
    gin: &mut NdArray<F>,
) {
    let (sa, sb) = (a.shape(), b.shape());
    match kind {
        MatMulKind::TwoD | MatMulKind::BatchedLeft => {
            let k = *sa.last().unwrap();
            let m = a.numel() / k;
            let n = *sb.last().unwrap();
            if slot == 0 {
                // dA(m,k) += dC(m,n) * B^T(n,k)
                gemm_strided(
                    m, n, k,
                    go.data(), n as isize, 1,
                    b.data(), 1, n as isize,
                    gin.data_mut(),
                    F::one(),
                );
            } else {
                // dB(k,n) += A^T(k,m) * dC(m,n)
                gemm_strided(
                    k, m, n,
                    a.data(), 1, k as isize,
                    go.data(), n as isize, 1,
                    gin.data_mut(),
                    F::one(),
                );
            }
        }
        MatMulKind::BatchedBoth => {
            let nd = sa.len();
            let (m, k, n) = (sa[nd - 2], sa[nd - 1], sb[nd - 1]);
            let batch: usize = sa[..nd - 2].iter().product();
            for i in 0..batch {
                let goi = &go.data()[i * m * n..(i + 1) * m * n];
                if slot == 0 {
                    gemm_strided(
                        m, n, k,
                        goi, n as isize, 1,
                        &b.data()[i * k * n..(i + 1) * k * n], 1, n as isize,
                        &mut gin.data_mut()[i * m * k..(i + 1) * m * k],
                        F::one(),
                    );
                } else {
                    gemm_strided(
                        k, m, n,
                        &a.data()[i * m * k..(i + 1) * m * k], 1, k as isize,
                        goi, n as isize, 1,
                        &mut gin.data_mut()[i * k * n..(i + 1) * k * n],
                        F::one(),
                    );
                }
            }
        }
    }
}
