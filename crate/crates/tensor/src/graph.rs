//! Dynamic gradient tape.
//!
//! Every forward op appends a node holding its value and the recipe needed to
//! push gradients back to its operands. A graph lives for one forward/backward
//! pass and is dropped afterwards.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{invalid, mismatch, Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{check_shape, numel, split_axis, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    SumAll(Var),
    SumAxis(Var, usize),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Expand(Var, usize),
    BiasAdd(Var, Var),
    Conv1d(Var, Var, Var),
    Conv2d(Var, Var, Var, usize),
    Conv3d(Var, Var, Var),
    Gather(Var, usize, Rc<[usize]>),
    ScatterAdd(Var, usize, Rc<[usize]>),
    AvgPool3d(Var),
    Upsample3d(Var),
    Upsample2d(Var),
    SelectiveScan {
        x: Var,
        a: Var,
        b: Var,
        c: Var,
        states: Vec<f64>,
    },
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<f64>,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
    pub(crate) param: Option<ParamId>,
}

/// A single-pass gradient tape. Not shared across threads.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Copies a node out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are valid")
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        check_shape("constant", shape)?;
        if numel(shape) != data.len() {
            return Err(mismatch("constant", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    /// Leaf that participates in the tape when `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Binds a stored parameter, reusing the node when bound twice.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id));
        self.nodes[v.0].param = Some(id);
        self.bound.insert(id, v);
        v
    }

    /// Parameters bound on this tape, in binding order.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        let mut out: Vec<_> = self.bound.iter().map(|(&p, &v)| (p, v)).collect();
        out.sort_by_key(|&(_, v)| v.0);
        out
    }

    // ---- elementwise -------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, make(a, b), ng))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(&[a]);
        self.push(self.shape(a).to_vec(), value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    // ---- linear algebra ----------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    /// `[batch, m, k] x [batch, k, n] -> [batch, m, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("batch_matmul", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (va, vb) = (self.value(a), self.value(b));
        for i in 0..bs {
            matmul_into(
                &va[i * m * k..(i + 1) * m * k],
                &vb[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![bs, m, n], out, Op::BatchMatMul(a, b), ng))
    }

    // ---- reductions and normalisation ---------------------------------

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(invalid(
                op,
                format!("axis {axis} out of range for {:?}", self.shape(a)),
            ));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let value = softmax_along(self.value(a), self.shape(a), axis, false);
        let ng = self.ng(&[a]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Softmax(a, axis), ng))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", a, axis)?;
        let value = softmax_along(self.value(a), self.shape(a), axis, true);
        let ng = self.ng(&[a]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::LogSoftmax(a, axis), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.ng(&[a]);
        self.push(vec![1], vec![s], Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums out `axis`; a rank-1 input reduces to shape `[1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", a, axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut()
                    .zip(&src[base..base + inner])
                    .for_each(|(d, s)| *d += s);
            }
        }
        let mut new_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let ng = self.ng(&[a]);
        Ok(self.push(new_shape, out, Op::SumAxis(a, axis), ng))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean_axis", a, axis)?;
        let n = self.shape(a)[axis] as f64;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n))
    }

    // ---- shape manipulation -------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        check_shape("reshape", shape)?;
        if numel(shape) != self.value(a).len() {
            return Err(mismatch("reshape", self.shape(a), shape));
        }
        let value = self.value(a).to_vec();
        let ng = self.ng(&[a]);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), ng))
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true))
        {
            return Err(invalid(
                "permute",
                format!("{axes:?} is not a permutation of rank {}", shape.len()),
            ));
        }
        let map = permute_map(&shape, axes);
        let src = self.value(a);
        let value = map.iter().map(|&i| src[i]).collect();
        let out_shape = axes.iter().map(|&ax| shape[ax]).collect();
        let ng = self.ng(&[a]);
        Ok(self.push(out_shape, value, Op::Permute(a, axes.to_vec()), ng))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(invalid("transpose", "expects a rank-2 tensor"));
        }
        self.permute(a, &[1, 0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = self.ng(parts);
        Ok(self.push(shape, out, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", a, axis)?;
        let shape = self.shape(a).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{} exceeds axis of {}", start + len, shape[axis]),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let ng = self.ng(&[a]);
        Ok(self.push(new_shape, out, Op::Slice(a, axis, start), ng))
    }

    /// Inserts a new axis at position `axis` by repeating the input `size` times.
    pub fn expand(&mut self, a: Var, axis: usize, size: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis > shape.len() || size == 0 {
            return Err(invalid(
                "expand",
                format!("cannot insert axis {axis} of size {size} into {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let src = self.value(a);
        let mut out = Vec::with_capacity(outer * size * inner);
        for o in 0..outer {
            for _ in 0..size {
                out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut new_shape = shape;
        new_shape.insert(axis, size);
        let ng = self.ng(&[a]);
        Ok(self.push(new_shape, out, Op::Expand(a, axis), ng))
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 0).
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias));
        if sb.len() != 1 || sb[0] != sx[0] {
            return Err(mismatch("bias_add", &sx, sb));
        }
        let inner = numel(&sx[1..]);
        let b = self.value(bias);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i / inner])
            .collect();
        let ng = self.ng(&[x, bias]);
        Ok(self.push(sx, value, Op::BiasAdd(x, bias), ng))
    }

    // ---- indexing ------------------------------------------------------

    /// Picks entries `idx` along `axis`: `out[.., l, ..] = x[.., idx[l], ..]`.
    pub fn gather(&mut self, x: Var, axis: usize, idx: &[usize]) -> Result<Var> {
        self.check_axis("gather", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        if idx.is_empty() {
            return Err(invalid("gather", "empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(invalid("gather", format!("index {bad} out of range {n}")));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(outer * idx.len() * inner);
        for o in 0..outer {
            for &i in idx {
                let from = (o * n + i) * inner;
                out.extend_from_slice(&src[from..from + inner]);
            }
        }
        let mut new_shape = shape;
        new_shape[axis] = idx.len();
        let ng = self.ng(&[x]);
        Ok(self.push(new_shape, out, Op::Gather(x, axis, idx.into()), ng))
    }

    /// Accumulates entries along `axis` into `size` slots:
    /// `out[.., idx[l], ..] += x[.., l, ..]`.
    pub fn scatter_add(&mut self, x: Var, axis: usize, idx: &[usize], size: usize) -> Result<Var> {
        self.check_axis("scatter_add", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        if idx.len() != n {
            return Err(mismatch("scatter_add", &shape, &[idx.len()]));
        }
        if size == 0 {
            return Err(invalid("scatter_add", "destination size must be positive"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= size) {
            return Err(invalid("scatter_add", format!("index {bad} out of range {size}")));
        }
        let src = self.value(x);
        let mut out = vec![0.0; outer * size * inner];
        for o in 0..outer {
            for (l, &i) in idx.iter().enumerate() {
                let from = (o * n + l) * inner;
                let to = (o * size + i) * inner;
                for k in 0..inner {
                    out[to + k] += src[from + k];
                }
            }
        }
        let mut new_shape = shape;
        new_shape[axis] = size;
        let ng = self.ng(&[x]);
        Ok(self.push(new_shape, out, Op::ScatterAdd(x, axis, idx.into()), ng))
    }

    /// Row lookup into a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        if self.shape(table).len() != 2 {
            return Err(invalid("embedding", "table must be [vocab, dim]"));
        }
        self.gather(table, 0, ids)
    }

    // ---- convolution and resampling ------------------------------------

    /// `x: [ci, len]`, `w: [co, ci, k]`, `b: [co]`; zero padding `k/2`, stride 1.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[0] || sw[2] % 2 == 0 {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        self.check_bias("conv1d", b, sw[0])?;
        let geom = ConvGeom::new(&[sx[1]], sw[2], 1);
        let out = conv_forward(self.value(x), self.value(w), self.value(b), sx[0], sw[0], &geom);
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(vec![sw[0], geom.out[0]], out, Op::Conv1d(x, w, b), ng))
    }

    /// `x: [ci, h, w]`, `w: [co, ci, k, k]`, `b: [co]`; zero padding `k/2`, stride 1 or 2.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(mismatch("conv2d", &sx, &sw));
        }
        if stride != 1 && stride != 2 {
            return Err(invalid("conv2d", format!("unsupported stride {stride}")));
        }
        self.check_bias("conv2d", b, sw[0])?;
        let geom = ConvGeom::new(&sx[1..], sw[2], stride);
        let out = conv_forward(self.value(x), self.value(w), self.value(b), sx[0], sw[0], &geom);
        let ng = self.ng(&[x, w, b]);
        let shape = vec![sw[0], geom.out[0], geom.out[1]];
        Ok(self.push(shape, out, Op::Conv2d(x, w, b, stride), ng))
    }

    /// `x: [ci, d, h, w]`, `w: [co, ci, k, k, k]`, `b: [co]`; zero padding `k/2`, stride 1.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4
            || sw.len() != 5
            || sw[1] != sx[0]
            || sw[2] != sw[3]
            || sw[3] != sw[4]
            || sw[2] % 2 == 0
        {
            return Err(mismatch("conv3d", &sx, &sw));
        }
        self.check_bias("conv3d", b, sw[0])?;
        let geom = ConvGeom::new(&sx[1..], sw[2], 1);
        let out = conv_forward(self.value(x), self.value(w), self.value(b), sx[0], sw[0], &geom);
        let ng = self.ng(&[x, w, b]);
        let shape = vec![sw[0], geom.out[0], geom.out[1], geom.out[2]];
        Ok(self.push(shape, out, Op::Conv3d(x, w, b), ng))
    }

    fn check_bias(&self, op: &'static str, b: Var, co: usize) -> Result<()> {
        if self.shape(b) != [co] {
            return Err(mismatch(op, self.shape(b), &[co]));
        }
        Ok(())
    }

    /// 2x2x2 average pooling over the spatial axes of `[c, d, h, w]` (all even).
    pub fn avg_pool3d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[1..].iter().any(|d| d % 2 != 0) {
            return Err(invalid("avg_pool3d", format!("needs [c, even, even, even], got {s:?}")));
        }
        let (c, d, h, w) = (s[0], s[1] / 2, s[2] / 2, s[3] / 2);
        let src = self.value(x);
        let mut out = vec![0.0; c * d * h * w];
        for (o, v) in out.iter_mut().enumerate() {
            let (ci, i, j, k) = unravel4(o, d, h, w);
            let mut acc = 0.0;
            for di in 0..2 {
                for dj in 0..2 {
                    for dk in 0..2 {
                        acc += src[((ci * s[1] + 2 * i + di) * s[2] + 2 * j + dj) * s[3] + 2 * k + dk];
                    }
                }
            }
            *v = acc / 8.0;
        }
        let ng = self.ng(&[x]);
        Ok(self.push(vec![c, d, h, w], out, Op::AvgPool3d(x), ng))
    }

    /// Nearest-neighbour x2 upsampling of `[c, d, h, w]`.
    pub fn upsample3d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(invalid("upsample3d", format!("needs rank 4, got {s:?}")));
        }
        let (c, d, h, w) = (s[0], s[1] * 2, s[2] * 2, s[3] * 2);
        let src = self.value(x);
        let out = (0..c * d * h * w)
            .map(|o| {
                let (ci, i, j, k) = unravel4(o, d, h, w);
                src[((ci * s[1] + i / 2) * s[2] + j / 2) * s[3] + k / 2]
            })
            .collect();
        let ng = self.ng(&[x]);
        Ok(self.push(vec![c, d, h, w], out, Op::Upsample3d(x), ng))
    }

    /// Nearest-neighbour upsampling of `[c, h, w]` to `[c, out_h, out_w]`,
    /// where `ceil(out/2)` must equal the input extent.
    pub fn upsample2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || out_h.div_ceil(2) != s[1] || out_w.div_ceil(2) != s[2] {
            return Err(mismatch("upsample2d", &s, &[s.first().copied().unwrap_or(0), out_h, out_w]));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(s[0] * out_h * out_w);
        for c in 0..s[0] {
            for i in 0..out_h {
                for j in 0..out_w {
                    out.push(src[(c * s[1] + i / 2) * s[2] + j / 2]);
                }
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(vec![s[0], out_h, out_w], out, Op::Upsample2d(x), ng))
    }

    // ---- sequence ------------------------------------------------------

    /// Diagonal gated linear recurrence over `[len, channels]` sequences:
    /// `h_t = a_t * h_{t-1} + b_t * x_t`, `y_t = c_t * h_t`, `h_0 = 0`.
    pub fn selective_scan(&mut self, x: Var, a: Var, b: Var, c: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(invalid("selective_scan", format!("x must be [len, channels], got {s:?}")));
        }
        for g in [a, b, c] {
            self.same_shape("selective_scan", x, g)?;
        }
        let (len, ch) = (s[0], s[1]);
        let (vx, va, vb, vc) = (self.value(x), self.value(a), self.value(b), self.value(c));
        let mut states = vec![0.0; len * ch];
        let mut out = vec![0.0; len * ch];
        for t in 0..len {
            for k in 0..ch {
                let i = t * ch + k;
                let prev = if t == 0 { 0.0 } else { states[i - ch] };
                let h = va[i] * prev + vb[i] * vx[i];
                states[i] = h;
                out[i] = vc[i] * h;
            }
        }
        let ng = self.ng(&[x, a, b, c]);
        Ok(self.push(s, out, Op::SelectiveScan { x, a, b, c, states }, ng))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn unravel4(o: usize, d: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
    let k = o % w;
    let j = (o / w) % h;
    let i = (o / (w * h)) % d;
    (o / (w * h * d), i, j, k)
}

/// `out += a * b` for row-major `[m,k] x [k,n]`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, &bv)| *o += av * bv);
        }
    }
}

/// Output position -> input flat offset for a permutation.
pub(crate) fn permute_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    map
}

pub(crate) fn softmax_along(src: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * n + l) * inner + i;
            let max = (0..n).map(|l| src[at(l)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n).map(|l| (src[at(l)] - max).exp()).sum();
            let lz = z.ln();
            for l in 0..n {
                out[at(l)] = if log {
                    src[at(l)] - max - lz
                } else {
                    (src[at(l)] - max).exp() / z
                };
            }
        }
    }
    out
}

/// Spatial bookkeeping shared by the 1/2/3-D convolutions.
pub(crate) struct ConvGeom {
    pub(crate) inp: Vec<usize>,
    pub(crate) out: Vec<usize>,
    pub(crate) k: usize,
    pub(crate) stride: usize,
}

impl ConvGeom {
    pub(crate) fn new(inp: &[usize], k: usize, stride: usize) -> Self {
        let pad = k / 2;
        let out = inp
            .iter()
            .map(|&d| (d + 2 * pad - k) / stride + 1)
            .collect();
        Self {
            inp: inp.to_vec(),
            out,
            k,
            stride,
        }
    }

    fn in_numel(&self) -> usize {
        numel(&self.inp)
    }

    fn out_numel(&self) -> usize {
        numel(&self.out)
    }

    fn kernel_numel(&self) -> usize {
        self.k.pow(self.inp.len() as u32)
    }

    /// For every kernel tap, the list of (out_offset, in_offset) pairs that
    /// stay inside the padded input.
    pub(crate) fn taps(&self) -> Vec<Vec<(u32, u32)>> {
        let pad = self.k as isize / 2;
        let dims = self.inp.len();
        let nk = self.kernel_numel();
        let koffs: Vec<[isize; 3]> = (0..nk)
            .map(|t| {
                let mut koff = [0isize; 3];
                let mut r = t;
                for d in (0..dims).rev() {
                    koff[d] = (r % self.k) as isize - pad;
                    r /= self.k;
                }
                koff
            })
            .collect();
        let mut taps = vec![Vec::with_capacity(self.out_numel()); nk];
        let mut coords = [0usize; 3];
        for o in 0..self.out_numel() {
            let mut r = o;
            for d in (0..dims).rev() {
                coords[d] = r % self.out[d];
                r /= self.out[d];
            }
            for (t, koff) in koffs.iter().enumerate() {
                let mut in_off = 0usize;
                let mut inside = true;
                for d in 0..dims {
                    let c = (coords[d] * self.stride) as isize + koff[d];
                    if c < 0 || c >= self.inp[d] as isize {
                        inside = false;
                        break;
                    }
                    in_off = in_off * self.inp[d] + c as usize;
                }
                if inside {
                    taps[t].push((o as u32, in_off as u32));
                }
            }
        }
        taps
    }
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], b: &[f64], ci: usize, co: usize, g: &ConvGeom) -> Vec<f64> {
    let (ni, no, nk) = (g.in_numel(), g.out_numel(), g.kernel_numel());
    let mut out = vec![0.0; co * no];
    for (c, chunk) in out.chunks_mut(no).enumerate() {
        chunk.fill(b[c]);
    }
    let taps = g.taps();
    for c_out in 0..co {
        let dst = &mut out[c_out * no..(c_out + 1) * no];
        for c_in in 0..ci {
            let src = &x[c_in * ni..(c_in + 1) * ni];
            let wrow = &w[(c_out * ci + c_in) * nk..(c_out * ci + c_in + 1) * nk];
            for (t, pairs) in taps.iter().enumerate() {
                let wv = wrow[t];
                if wv == 0.0 {
                    continue;
                }
                for &(o, i) in pairs {
                    dst[o as usize] += wv * src[i as usize];
                }
            }
        }
    }
    out
}

/// Gradients of a convolution w.r.t. input, weights and bias.
pub(crate) fn conv_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    ci: usize,
    co: usize,
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ni, no, nk) = (g.in_numel(), g.out_numel(), g.kernel_numel());
    let mut dx = vec![0.0; ci * ni];
    let mut dw = vec![0.0; co * ci * nk];
    let db = dout.chunks(no).map(|c| c.iter().sum()).collect();
    let taps = g.taps();
    for c_out in 0..co {
        let go = &dout[c_out * no..(c_out + 1) * no];
        for c_in in 0..ci {
            let src = &x[c_in * ni..(c_in + 1) * ni];
            let base = (c_out * ci + c_in) * nk;
            let dsrc = &mut dx[c_in * ni..(c_in + 1) * ni];
            for (t, pairs) in taps.iter().enumerate() {
                let wv = w[base + t];
                let mut acc = 0.0;
                for &(o, i) in pairs {
                    let (o, i) = (o as usize, i as usize);
                    acc += go[o] * src[i];
                    dsrc[i] += wv * go[o];
                }
                dw[base + t] += acc;
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn scalar_check(shape: &[usize]) -> Result<()> {
    if numel(shape) != 1 {
        return Err(TensorError::NonScalarLoss(shape.to_vec()));
    }
    Ok(())
}
