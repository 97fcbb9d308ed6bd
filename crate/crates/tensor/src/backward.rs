use crate::error::{Result, TensorError};
use crate::graph::{conv_backward, matmul_into, permute_map, scalar_check, ConvGeom, Graph, Op, Var};
use crate::params::ParamStore;
use crate::tensor::split_axis;

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of every bound, trainable parameter into `store`.
    pub fn apply_to(&self, graph: &Graph, store: &mut ParamStore) -> Result<()> {
        for (id, var) in graph.bound_params() {
            if let Some(g) = self.get(var) {
                store.get_mut(id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], graph: &Graph, v: Var) -> Option<&'a mut [f64]> {
    if !graph.nodes[v.0].needs_grad {
        return None;
    }
    let n = graph.nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

fn add_into(dst: Option<&mut [f64]>, src: impl Iterator<Item = f64>) {
    if let Some(d) = dst {
        d.iter_mut().zip(src).for_each(|(a, b)| *a += b);
    }
}

impl Graph {
    /// Reverse pass from a single-element `loss`.
    ///
    /// Every leaf with `requires_grad` that is on the tape gets a gradient,
    /// zero when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        scalar_check(self.shape(loss))?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: "loss does not depend on any trainable leaf".into(),
            });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.step(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn step(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(slot(grads, self, *a), g.iter().copied());
                add_into(slot(grads, self, *b), g.iter().copied());
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, self, *a), g.iter().copied());
                add_into(slot(grads, self, *b), g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                add_into(slot(grads, self, *a), g.iter().zip(vb).map(|(g, y)| g * y));
                add_into(slot(grads, self, *b), g.iter().zip(va).map(|(g, x)| g * x));
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                add_into(slot(grads, self, *a), g.iter().zip(vb).map(|(g, y)| g / y));
                add_into(
                    slot(grads, self, *b),
                    g.iter().zip(out).zip(vb).map(|((g, q), y)| -g * q / y),
                );
            }
            Op::Scale(a, k) => add_into(slot(grads, self, *a), g.iter().map(|v| v * k)),
            Op::AddScalar(a) | Op::Reshape(a) => add_into(slot(grads, self, *a), g.iter().copied()),
            Op::Relu(a) => add_into(
                slot(grads, self, *a),
                g.iter().zip(out).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }),
            ),
            Op::Sigmoid(a) => add_into(
                slot(grads, self, *a),
                g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)),
            ),
            Op::Exp(a) => add_into(slot(grads, self, *a), g.iter().zip(out).map(|(g, y)| g * y)),
            Op::Log(a) => {
                let va = self.value(*a);
                add_into(slot(grads, self, *a), g.iter().zip(va).map(|(g, x)| g / x));
            }
            Op::Tanh(a) => add_into(
                slot(grads, self, *a),
                g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)),
            ),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(da) = slot(grads, self, *a) {
                    matmul_nt(g, vb, da, m, n, k);
                }
                if let Some(db) = slot(grads, self, *b) {
                    matmul_tn(va, g, db, m, k, n);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(da) = slot(grads, self, *a) {
                    for t in 0..bs {
                        matmul_nt(
                            &g[t * m * n..(t + 1) * m * n],
                            &vb[t * k * n..(t + 1) * k * n],
                            &mut da[t * m * k..(t + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if let Some(db) = slot(grads, self, *b) {
                    for t in 0..bs {
                        matmul_tn(
                            &va[t * m * k..(t + 1) * m * k],
                            &g[t * m * n..(t + 1) * m * n],
                            &mut db[t * k * n..(t + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Softmax(a, axis) | Op::LogSoftmax(a, axis) => {
                let log = matches!(node.op, Op::LogSoftmax(..));
                let (outer, n, inner) = split_axis(&node.shape, *axis);
                if let Some(da) = slot(grads, self, *a) {
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |l: usize| (o * n + l) * inner + j;
                            if log {
                                let gsum: f64 = (0..n).map(|l| g[at(l)]).sum();
                                for l in 0..n {
                                    da[at(l)] += g[at(l)] - out[at(l)].exp() * gsum;
                                }
                            } else {
                                let dot: f64 = (0..n).map(|l| g[at(l)] * out[at(l)]).sum();
                                for l in 0..n {
                                    da[at(l)] += out[at(l)] * (g[at(l)] - dot);
                                }
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => add_into(
                slot(grads, self, *a),
                std::iter::repeat(g[0]),
            ),
            Op::SumAxis(a, axis) => {
                let (outer, n, inner) = split_axis(self.shape(*a), *axis);
                if let Some(da) = slot(grads, self, *a) {
                    for o in 0..outer {
                        for l in 0..n {
                            let base = (o * n + l) * inner;
                            for k in 0..inner {
                                da[base + k] += g[o * inner + k];
                            }
                        }
                    }
                }
            }
            Op::Permute(a, axes) => {
                let map = permute_map(self.shape(*a), axes);
                if let Some(da) = slot(grads, self, *a) {
                    for (o, &src) in map.iter().enumerate() {
                        da[src] += g[o];
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let outer: usize = node.shape[..*axis].iter().product();
                let inner: usize = node.shape[axis + 1..].iter().product();
                let total = node.shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis] * inner;
                    if let Some(dp) = slot(grads, self, *p) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + len];
                            dp[o * len..(o + 1) * len]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice(a, axis, start) => {
                let (outer, n, inner) = split_axis(self.shape(*a), *axis);
                let len = node.shape[*axis];
                if let Some(da) = slot(grads, self, *a) {
                    for o in 0..outer {
                        let to = (o * n + start) * inner;
                        let from = o * len * inner;
                        da[to..to + len * inner]
                            .iter_mut()
                            .zip(&g[from..from + len * inner])
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Expand(a, axis) => {
                let sa = self.shape(*a);
                let outer: usize = sa[..*axis].iter().product();
                let inner: usize = sa[*axis..].iter().product();
                let size = node.shape[*axis];
                if let Some(da) = slot(grads, self, *a) {
                    for o in 0..outer {
                        for s in 0..size {
                            let from = (o * size + s) * inner;
                            da[o * inner..(o + 1) * inner]
                                .iter_mut()
                                .zip(&g[from..from + inner])
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                }
            }
            Op::BiasAdd(x, b) => {
                let inner: usize = node.shape[1..].iter().product();
                add_into(slot(grads, self, *x), g.iter().copied());
                if let Some(db) = slot(grads, self, *b) {
                    for (c, chunk) in g.chunks(inner).enumerate() {
                        db[c] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Conv1d(x, w, b) | Op::Conv3d(x, w, b) | Op::Conv2d(x, w, b, _) => {
                let stride = match node.op {
                    Op::Conv2d(_, _, _, s) => s,
                    _ => 1,
                };
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let geom = ConvGeom::new(&sx[1..], sw[2], stride);
                let (dx, dw, db) =
                    conv_backward(self.value(*x), self.value(*w), g, sx[0], sw[0], &geom);
                add_into(slot(grads, self, *x), dx.into_iter());
                add_into(slot(grads, self, *w), dw.into_iter());
                add_into(slot(grads, self, *b), db.into_iter());
            }
            Op::Gather(x, axis, idx) => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                if let Some(dx) = slot(grads, self, *x) {
                    for o in 0..outer {
                        for (l, &src) in idx.iter().enumerate() {
                            let from = (o * idx.len() + l) * inner;
                            let to = (o * n + src) * inner;
                            for k in 0..inner {
                                dx[to + k] += g[from + k];
                            }
                        }
                    }
                }
            }
            Op::ScatterAdd(x, axis, idx) => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let size = node.shape[*axis];
                if let Some(dx) = slot(grads, self, *x) {
                    for o in 0..outer {
                        for (l, &dst) in idx.iter().enumerate() {
                            let to = (o * n + l) * inner;
                            let from = (o * size + dst) * inner;
                            for k in 0..inner {
                                dx[to + k] += g[from + k];
                            }
                        }
                    }
                }
            }
            Op::AvgPool3d(x) => {
                let s = self.shape(*x).to_vec();
                let (d, h, w) = (node.shape[1], node.shape[2], node.shape[3]);
                if let Some(dx) = slot(grads, self, *x) {
                    for (o, &gv) in g.iter().enumerate() {
                        let (c, i, j, k) = crate::graph::unravel4(o, d, h, w);
                        for di in 0..2 {
                            for dj in 0..2 {
                                for dk in 0..2 {
                                    dx[((c * s[1] + 2 * i + di) * s[2] + 2 * j + dj) * s[3]
                                        + 2 * k
                                        + dk] += gv / 8.0;
                                }
                            }
                        }
                    }
                }
            }
            Op::Upsample3d(x) => {
                let s = self.shape(*x).to_vec();
                let (d, h, w) = (node.shape[1], node.shape[2], node.shape[3]);
                if let Some(dx) = slot(grads, self, *x) {
                    for (o, &gv) in g.iter().enumerate() {
                        let (c, i, j, k) = crate::graph::unravel4(o, d, h, w);
                        dx[((c * s[1] + i / 2) * s[2] + j / 2) * s[3] + k / 2] += gv;
                    }
                }
            }
            Op::Upsample2d(x) => {
                let s = self.shape(*x).to_vec();
                let (oh, ow) = (node.shape[1], node.shape[2]);
                if let Some(dx) = slot(grads, self, *x) {
                    for c in 0..s[0] {
                        for i in 0..oh {
                            for j in 0..ow {
                                dx[(c * s[1] + i / 2) * s[2] + j / 2] += g[(c * oh + i) * ow + j];
                            }
                        }
                    }
                }
            }
            Op::SelectiveScan { x, a, b, c, states } => {
                let (len, ch) = (node.shape[0], node.shape[1]);
                let (vx, va, vb, vc) = (self.value(*x), self.value(*a), self.value(*b), self.value(*c));
                // Total derivative w.r.t. each hidden state, swept backwards.
                let mut dh = vec![0.0; len * ch];
                for t in (0..len).rev() {
                    for k in 0..ch {
                        let i = t * ch + k;
                        let carry = if t + 1 < len { va[i + ch] * dh[i + ch] } else { 0.0 };
                        dh[i] = vc[i] * g[i] + carry;
                    }
                }
                if let Some(dx) = slot(grads, self, *x) {
                    for i in 0..len * ch {
                        dx[i] += dh[i] * vb[i];
                    }
                }
                if let Some(db) = slot(grads, self, *b) {
                    for i in 0..len * ch {
                        db[i] += dh[i] * vx[i];
                    }
                }
                if let Some(da) = slot(grads, self, *a) {
                    for i in ch..len * ch {
                        da[i] += dh[i] * states[i - ch];
                    }
                }
                if let Some(dc) = slot(grads, self, *c) {
                    for i in 0..len * ch {
                        dc[i] += g[i] * states[i];
                    }
                }
            }
        }
    }
}

/// `out += a * b^T` with `a: [m, n]`, `b: [k, n]`, `out: [m, k]`.
fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += a^T * g` with `a: [m, k]`, `g: [m, n]`, `out: [k, n]`.
fn matmul_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let mut at = vec![0.0; k * m];
    for i in 0..m {
        for p in 0..k {
            at[p * m + i] = a[i * k + p];
        }
    }
    matmul_into(&at, g, out, k, m, n);
}
