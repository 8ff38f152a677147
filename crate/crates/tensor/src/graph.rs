//! Replay-graph reverse-mode autodiff.
//!
//! A [`Graph`] is an append-only arena of nodes; every builder method
//! evaluates its result eagerly and records the op. [`Graph::backward`]
//! emits the gradient computation *as new graph nodes*, so gradients are
//! themselves differentiable — calling `backward` on an expression built
//! from a previous `backward` yields second-order derivatives (used by the
//! gradient-penalty path). The op set is closed under differentiation.

use crate::elem::Elem;
use crate::kernels;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug)]
enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Abs,
    Exp,
    Ln,
    Tanh,
    MinZero,
    LeakyRelu { slope: T },
    Scale { factor: T },
    AddScalar,
    Powf { exponent: T },
    Matmul { ta: bool, tb: bool },
    Transpose,
    Conv2d { stride: usize, pad: usize },
    ConvBwdInput { stride: usize, pad: usize },
    ConvBwdKernel { stride: usize, pad: usize },
    Upsample2x,
    DownsampleSum2x,
    Reshape,
    ConcatAxis1,
    SliceAxis1 { start: usize },
    PadAxis1 { before: usize },
    SumAll,
    BroadcastFill,
    SumRows,
    BroadcastRows,
    SumSpatial,
    BroadcastSpatial,
    SumPerSample,
    BroadcastPerSample,
    MulPerSample,
    BiasAddChan,
    MulChan,
    AddChan,
    DotSpatial,
    AddRowBroadcast,
}

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<NodeId>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Elem> {
    nodes: Vec<Node<T>>,
}

impl<T: Elem> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.index()].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.index()].requires_grad
    }

    /// Trainable leaf: gradients flow into it.
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Frozen leaf: treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push_node(value, vec![], Op::Leaf, requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, parents: Vec<NodeId>, op: Op<T>) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.index()].requires_grad);
        self.push_node(value, parents, op, requires_grad)
    }

    fn push_node(
        &mut self,
        value: Tensor<T>,
        parents: Vec<NodeId>,
        op: Op<T>,
        requires_grad: bool,
    ) -> NodeId {
        let id = NodeId(u32::try_from(self.nodes.len()).expect("graph too large"));
        self.nodes.push(Node {
            value,
            parents,
            op,
            requires_grad,
        });
        id
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, vec![a, b], Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, vec![a, b], Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, vec![a, b], Op::Mul)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(v, vec![a, b], Op::Div)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(v, vec![a], Op::Neg)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, vec![a], Op::Abs)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, vec![a], Op::Exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, vec![a], Op::Ln)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, vec![a], Op::Tanh)
    }

    /// `min(0, x)` — the hinge building block.
    pub fn min_zero(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.min(T::zero()));
        self.push(v, vec![a], Op::MinZero)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: T) -> NodeId {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        self.push(v, vec![a], Op::LeakyRelu { slope })
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, vec![a], Op::Scale { factor })
    }

    pub fn add_scalar(&mut self, a: NodeId, offset: T) -> NodeId {
        let v = self.value(a).map(|x| x + offset);
        self.push(v, vec![a], Op::AddScalar)
    }

    pub fn powf(&mut self, a: NodeId, exponent: T) -> NodeId {
        let v = self.value(a).map(|x| x.powf(exponent));
        self.push(v, vec![a], Op::Powf { exponent })
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let v = kernels::matmul(self.value(a), self.value(b), ta, tb);
        self.push(v, vec![a, b], Op::Matmul { ta, tb })
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = kernels::dims2(self.value(a), "transpose input");
        let src = self.value(a).data();
        let mut out = Tensor::zeros(&[c, r]);
        let dst = out.data_mut();
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
        self.push(out, vec![a], Op::Transpose)
    }

    // ---- convolution ----

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, stride: usize, pad: usize) -> NodeId {
        let v = kernels::conv2d(self.value(x), self.value(kernel), stride, pad);
        self.push(v, vec![x, kernel], Op::Conv2d { stride, pad })
    }

    pub fn conv2d_bwd_input(
        &mut self,
        grad_out: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
        in_hw: (usize, usize),
    ) -> NodeId {
        let v = kernels::conv2d_bwd_input(
            self.value(grad_out),
            self.value(kernel),
            stride,
            pad,
            in_hw,
        );
        self.push(v, vec![grad_out, kernel], Op::ConvBwdInput { stride, pad })
    }

    pub fn conv2d_bwd_kernel(
        &mut self,
        x: NodeId,
        grad_out: NodeId,
        stride: usize,
        pad: usize,
        kernel_hw: (usize, usize),
    ) -> NodeId {
        let v = kernels::conv2d_bwd_kernel(
            self.value(x),
            self.value(grad_out),
            stride,
            pad,
            kernel_hw,
        );
        self.push(v, vec![x, grad_out], Op::ConvBwdKernel { stride, pad })
    }

    pub fn upsample2x(&mut self, x: NodeId) -> NodeId {
        let v = kernels::upsample2x(self.value(x));
        self.push(v, vec![x], Op::Upsample2x)
    }

    pub fn downsample_sum2x(&mut self, x: NodeId) -> NodeId {
        let v = kernels::downsample_sum2x(self.value(x));
        self.push(v, vec![x], Op::DownsampleSum2x)
    }

    // ---- shape ----

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let v = self.value(x).reshape(shape);
        self.push(v, vec![x], Op::Reshape)
    }

    /// Concatenate along axis 1 of rank >= 2 tensors with equal outer and
    /// trailing dims.
    pub fn concat_axis1(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        assert!(sa.len() >= 2 && sa.len() == sb.len(), "concat rank mismatch");
        assert_eq!(sa[0], sb[0], "concat outer dim mismatch");
        assert_eq!(sa[2..], sb[2..], "concat trailing dims mismatch");
        let (n, ca, cb) = (sa[0], sa[1], sb[1]);
        let inner: usize = sa[2..].iter().product();
        let mut shape = sa.to_vec();
        shape[1] = ca + cb;
        let mut out = Tensor::zeros(&shape);
        {
            let dst = out.data_mut();
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for i in 0..n {
                let base = i * (ca + cb) * inner;
                dst[base..base + ca * inner]
                    .copy_from_slice(&da[i * ca * inner..(i + 1) * ca * inner]);
                dst[base + ca * inner..base + (ca + cb) * inner]
                    .copy_from_slice(&db[i * cb * inner..(i + 1) * cb * inner]);
            }
        }
        self.push(out, vec![a, b], Op::ConcatAxis1)
    }

    pub fn slice_axis1(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let s = self.value(x).shape();
        assert!(s.len() >= 2 && start + len <= s[1], "slice out of range");
        let (n, c) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let mut shape = s.to_vec();
        shape[1] = len;
        let mut out = Tensor::zeros(&shape);
        {
            let dst = out.data_mut();
            let src = self.value(x).data();
            for i in 0..n {
                dst[i * len * inner..(i + 1) * len * inner].copy_from_slice(
                    &src[(i * c + start) * inner..(i * c + start + len) * inner],
                );
            }
        }
        self.push(out, vec![x], Op::SliceAxis1 { start })
    }

    pub fn pad_axis1(&mut self, x: NodeId, before: usize, after: usize) -> NodeId {
        let s = self.value(x).shape();
        assert!(s.len() >= 2, "pad_axis1 needs rank >= 2");
        let (n, c) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let mut shape = s.to_vec();
        shape[1] = before + c + after;
        let mut out = Tensor::zeros(&shape);
        {
            let dst = out.data_mut();
            let src = self.value(x).data();
            let cc = before + c + after;
            for i in 0..n {
                dst[(i * cc + before) * inner..(i * cc + before + c) * inner]
                    .copy_from_slice(&src[i * c * inner..(i + 1) * c * inner]);
            }
        }
        self.push(out, vec![x], Op::PadAxis1 { before })
    }

    // ---- reductions and broadcasts ----

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, vec![x], Op::SumAll)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.scale(s, T::one() / T::from_usize(n))
    }

    pub fn broadcast_fill(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let v = Tensor::full(shape, self.value(x).item());
        self.push(v, vec![x], Op::BroadcastFill)
    }

    /// `[N,D] -> [D]`, summing over rows.
    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let (n, d) = kernels::dims2(self.value(x), "sum_rows input");
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[d]);
        {
            let dst = out.data_mut();
            for i in 0..n {
                for j in 0..d {
                    dst[j] += src[i * d + j];
                }
            }
        }
        self.push(out, vec![x], Op::SumRows)
    }

    /// `[D] -> [N,D]`.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> NodeId {
        let s = self.value(x).shape();
        assert_eq!(s.len(), 1, "broadcast_rows input must be rank 1");
        let d = s[0];
        let src = self.value(x).data().to_vec();
        let v = Tensor::from_fn(&[rows, d], |i| src[i % d]);
        self.push(v, vec![x], Op::BroadcastRows)
    }

    /// `[N,C,H,W] -> [N,C]`, summing over space.
    pub fn sum_spatial(&mut self, x: NodeId) -> NodeId {
        let (n, c, h, w) = kernels::dims4(self.value(x), "sum_spatial input");
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c]);
        {
            let dst = out.data_mut();
            for i in 0..n * c {
                let mut acc = T::zero();
                for v in &src[i * h * w..(i + 1) * h * w] {
                    acc += *v;
                }
                dst[i] = acc;
            }
        }
        self.push(out, vec![x], Op::SumSpatial)
    }

    /// `[N,C] -> [N,C,H,W]`.
    pub fn broadcast_spatial(&mut self, x: NodeId, hw: (usize, usize)) -> NodeId {
        let (n, c) = kernels::dims2(self.value(x), "broadcast_spatial input");
        let src = self.value(x).data().to_vec();
        let (h, w) = hw;
        let v = Tensor::from_fn(&[n, c, h, w], |i| src[i / (h * w)]);
        self.push(v, vec![x], Op::BroadcastSpatial)
    }

    /// `[N, ...] -> [N]`, summing everything but the leading axis.
    pub fn sum_per_sample(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).shape();
        assert!(!s.is_empty(), "sum_per_sample needs rank >= 1");
        let n = s[0];
        let inner: usize = s[1..].iter().product();
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[n]);
        {
            let dst = out.data_mut();
            for i in 0..n {
                let mut acc = T::zero();
                for v in &src[i * inner..(i + 1) * inner] {
                    acc += *v;
                }
                dst[i] = acc;
            }
        }
        self.push(out, vec![x], Op::SumPerSample)
    }

    /// `[N] -> [N, inner...]`.
    pub fn broadcast_per_sample(&mut self, x: NodeId, inner: &[usize]) -> NodeId {
        let s = self.value(x).shape();
        assert_eq!(s.len(), 1, "broadcast_per_sample input must be rank 1");
        let n = s[0];
        let src = self.value(x).data().to_vec();
        let count: usize = inner.iter().product();
        let mut shape = vec![n];
        shape.extend_from_slice(inner);
        let v = Tensor::from_fn(&shape, |i| src[i / count]);
        self.push(v, vec![x], Op::BroadcastPerSample)
    }

    /// `x[N, ...] * v[N]` with per-sample scaling.
    pub fn mul_per_sample(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let s = self.value(x).shape().to_vec();
        let vs = self.value(v).shape();
        assert_eq!(vs.len(), 1, "mul_per_sample scale must be rank 1");
        assert_eq!(s[0], vs[0], "mul_per_sample batch mismatch");
        let inner: usize = s[1..].iter().product();
        let xd = self.value(x).data();
        let vd = self.value(v).data();
        let out = Tensor::from_fn(&s, |i| xd[i] * vd[i / inner]);
        self.push(out, vec![x, v], Op::MulPerSample)
    }

    // ---- channel-structured ops ----

    /// `x[N,C,H,W] + b[C]`.
    pub fn bias_add_chan(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (_, c, h, w) = kernels::dims4(self.value(x), "bias_add_chan input");
        let bs = self.value(b).shape();
        assert_eq!(bs, [c], "bias shape {bs:?} does not match {c} channels");
        let xd = self.value(x).data();
        let bd = self.value(b).data();
        let shape = self.value(x).shape().to_vec();
        let out = Tensor::from_fn(&shape, |i| xd[i] + bd[(i / (h * w)) % c]);
        self.push(out, vec![x, b], Op::BiasAddChan)
    }

    /// `x[N,C,H,W] * s[N,C]` per-sample per-channel scale.
    pub fn mul_chan(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let (n, c, h, w) = kernels::dims4(self.value(x), "mul_chan input");
        assert_eq!(self.value(s).shape(), [n, c], "mul_chan scale mismatch");
        let xd = self.value(x).data();
        let sd = self.value(s).data();
        let shape = self.value(x).shape().to_vec();
        let out = Tensor::from_fn(&shape, |i| xd[i] * sd[i / (h * w)]);
        self.push(out, vec![x, s], Op::MulChan)
    }

    /// `x[N,C,H,W] + t[N,C]` per-sample per-channel shift.
    pub fn add_chan(&mut self, x: NodeId, t: NodeId) -> NodeId {
        let (n, c, h, w) = kernels::dims4(self.value(x), "add_chan input");
        assert_eq!(self.value(t).shape(), [n, c], "add_chan shift mismatch");
        let xd = self.value(x).data();
        let td = self.value(t).data();
        let shape = self.value(x).shape().to_vec();
        let out = Tensor::from_fn(&shape, |i| xd[i] + td[i / (h * w)]);
        self.push(out, vec![x, t], Op::AddChan)
    }

    /// Per-(sample, channel) dot product over space: `[N,C,H,W]^2 -> [N,C]`.
    pub fn dot_spatial(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, c, h, w) = kernels::dims4(self.value(a), "dot_spatial lhs");
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "dot_spatial shape mismatch"
        );
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = Tensor::zeros(&[n, c]);
        {
            let dst = out.data_mut();
            for i in 0..n * c {
                let mut acc = T::zero();
                for k in i * h * w..(i + 1) * h * w {
                    acc += ad[k] * bd[k];
                }
                dst[i] = acc;
            }
        }
        self.push(out, vec![a, b], Op::DotSpatial)
    }

    /// `x[N,D] + b[D]`.
    pub fn add_row_broadcast(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (_, d) = kernels::dims2(self.value(x), "add_row_broadcast input");
        assert_eq!(self.value(b).shape(), [d], "row bias shape mismatch");
        let xd = self.value(x).data();
        let bd = self.value(b).data();
        let shape = self.value(x).shape().to_vec();
        let out = Tensor::from_fn(&shape, |i| xd[i] + bd[i % d]);
        self.push(out, vec![x, b], Op::AddRowBroadcast)
    }

    // ---- backward ----

    /// Reverse-mode sweep seeded with ones over `root`'s shape (i.e. the
    /// derivative of `sum(root)`). Returns one gradient node per `wrt`
    /// entry, `None` where no differentiable path exists. The gradient
    /// nodes live in the same graph and can be differentiated again.
    pub fn backward(&mut self, root: NodeId, wrt: &[NodeId]) -> Vec<Option<NodeId>> {
        let bound = root.index();
        let mut needed = vec![false; bound + 1];
        needed[bound] = true;
        for i in (0..=bound).rev() {
            if needed[i] && self.nodes[i].requires_grad {
                for p in &self.nodes[i].parents {
                    needed[p.index()] = true;
                }
            }
        }
        let mut grads: Vec<Option<NodeId>> = vec![None; bound + 1];
        let seed = Tensor::full(self.nodes[bound].value.shape(), T::one());
        grads[bound] = Some(self.constant(seed));
        for i in (0..=bound).rev() {
            if !needed[i] || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let parents = self.nodes[i].parents.clone();
            if parents.is_empty() {
                continue;
            }
            let op = self.nodes[i].op;
            let contribs = self.vjp(op, NodeId(i as u32), &parents, g);
            debug_assert_eq!(contribs.len(), parents.len());
            for (slot, contrib) in contribs.into_iter().enumerate() {
                if let Some(c) = contrib {
                    let p = parents[slot].index();
                    grads[p] = Some(match grads[p] {
                        None => c,
                        Some(acc) => self.add(acc, c),
                    });
                }
            }
        }
        wrt.iter()
            .map(|w| grads.get(w.index()).copied().flatten())
            .collect()
    }

    /// Vector-Jacobian product of one node, expressed with graph ops so the
    /// result stays differentiable.
    fn vjp(&mut self, op: Op<T>, node: NodeId, parents: &[NodeId], g: NodeId) -> Vec<Option<NodeId>> {
        let want = |graph: &Self, slot: usize| graph.nodes[parents[slot].index()].requires_grad;
        match op {
            Op::Leaf => vec![],
            Op::Add => {
                vec![
                    want(self, 0).then_some(g),
                    want(self, 1).then_some(g),
                ]
            }
            Op::Sub => {
                let db = want(self, 1).then(|| self.neg(g));
                vec![want(self, 0).then_some(g), db]
            }
            Op::Mul => {
                let da = want(self, 0).then(|| self.mul(g, parents[1]));
                let db = want(self, 1).then(|| self.mul(g, parents[0]));
                vec![da, db]
            }
            Op::Div => {
                let da = want(self, 0).then(|| self.div(g, parents[1]));
                let db = want(self, 1).then(|| {
                    let gout = self.mul(g, node);
                    let q = self.div(gout, parents[1]);
                    self.neg(q)
                });
                vec![da, db]
            }
            Op::Neg => vec![want(self, 0).then(|| self.neg(g))],
            Op::Abs => vec![want(self, 0).then(|| {
                let sign = self.value(parents[0]).map(|x| {
                    if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                let s = self.constant(sign);
                self.mul(g, s)
            })],
            Op::Exp => vec![want(self, 0).then(|| self.mul(g, node))],
            Op::Ln => vec![want(self, 0).then(|| self.div(g, parents[0]))],
            Op::Tanh => vec![want(self, 0).then(|| {
                let y2 = self.mul(node, node);
                let ny2 = self.neg(y2);
                let one_minus = self.add_scalar(ny2, T::one());
                self.mul(g, one_minus)
            })],
            Op::MinZero => vec![want(self, 0).then(|| {
                let mask = self.value(parents[0]).map(|x| {
                    if x < T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
                let m = self.constant(mask);
                self.mul(g, m)
            })],
            Op::LeakyRelu { slope } => vec![want(self, 0).then(|| {
                let mask = self
                    .value(parents[0])
                    .map(|x| if x > T::zero() { T::one() } else { slope });
                let m = self.constant(mask);
                self.mul(g, m)
            })],
            Op::Scale { factor } => vec![want(self, 0).then(|| self.scale(g, factor))],
            Op::AddScalar => vec![want(self, 0).then_some(g)],
            Op::Powf { exponent } => vec![want(self, 0).then(|| {
                let xp = self.powf(parents[0], exponent - T::one());
                let sxp = self.scale(xp, exponent);
                self.mul(g, sxp)
            })],
            Op::Matmul { ta, tb } => {
                let (a, b) = (parents[0], parents[1]);
                let da = want(self, 0).then(|| match (ta, tb) {
                    (false, false) => self.matmul_t(g, b, false, true),
                    (true, false) => self.matmul_t(b, g, false, true),
                    (false, true) => self.matmul_t(g, b, false, false),
                    (true, true) => self.matmul_t(b, g, true, true),
                });
                let db = want(self, 1).then(|| match (ta, tb) {
                    (false, false) => self.matmul_t(a, g, true, false),
                    (true, false) => self.matmul_t(a, g, false, false),
                    (false, true) => self.matmul_t(g, a, true, false),
                    (true, true) => self.matmul_t(g, a, true, true),
                });
                vec![da, db]
            }
            Op::Transpose => vec![want(self, 0).then(|| self.transpose(g))],
            Op::Conv2d { stride, pad } => {
                let (x, k) = (parents[0], parents[1]);
                let in_hw = {
                    let s = self.value(x).shape();
                    (s[2], s[3])
                };
                let k_hw = {
                    let s = self.value(k).shape();
                    (s[2], s[3])
                };
                let dx = want(self, 0).then(|| self.conv2d_bwd_input(g, k, stride, pad, in_hw));
                let dk = want(self, 1).then(|| self.conv2d_bwd_kernel(x, g, stride, pad, k_hw));
                vec![dx, dk]
            }
            Op::ConvBwdInput { stride, pad } => {
                // node = conv2d_bwd_input(gy, k); upstream g is x-shaped
                let (gy, k) = (parents[0], parents[1]);
                let k_hw = {
                    let s = self.value(k).shape();
                    (s[2], s[3])
                };
                let dgy = want(self, 0).then(|| self.conv2d(g, k, stride, pad));
                let dk = want(self, 1).then(|| self.conv2d_bwd_kernel(g, gy, stride, pad, k_hw));
                vec![dgy, dk]
            }
            Op::ConvBwdKernel { stride, pad } => {
                // node = conv2d_bwd_kernel(x, gy); upstream g is kernel-shaped
                let (x, gy) = (parents[0], parents[1]);
                let in_hw = {
                    let s = self.value(x).shape();
                    (s[2], s[3])
                };
                let dx = want(self, 0).then(|| self.conv2d_bwd_input(gy, g, stride, pad, in_hw));
                let dgy = want(self, 1).then(|| self.conv2d(x, g, stride, pad));
                vec![dx, dgy]
            }
            Op::Upsample2x => vec![want(self, 0).then(|| self.downsample_sum2x(g))],
            Op::DownsampleSum2x => vec![want(self, 0).then(|| self.upsample2x(g))],
            Op::Reshape => vec![want(self, 0).then(|| {
                let shape = self.value(parents[0]).shape().to_vec();
                self.reshape(g, &shape)
            })],
            Op::ConcatAxis1 => {
                let ca = self.value(parents[0]).shape()[1];
                let cb = self.value(parents[1]).shape()[1];
                let da = want(self, 0).then(|| self.slice_axis1(g, 0, ca));
                let db = want(self, 1).then(|| self.slice_axis1(g, ca, cb));
                vec![da, db]
            }
            Op::SliceAxis1 { start } => vec![want(self, 0).then(|| {
                let full = self.value(parents[0]).shape()[1];
                let len = self.value(node).shape()[1];
                self.pad_axis1(g, start, full - start - len)
            })],
            Op::PadAxis1 { before } => vec![want(self, 0).then(|| {
                let len = self.value(parents[0]).shape()[1];
                self.slice_axis1(g, before, len)
            })],
            Op::SumAll => vec![want(self, 0).then(|| {
                let shape = self.value(parents[0]).shape().to_vec();
                self.broadcast_fill(g, &shape)
            })],
            Op::BroadcastFill => vec![want(self, 0).then(|| self.sum_all(g))],
            Op::SumRows => vec![want(self, 0).then(|| {
                let rows = self.value(parents[0]).shape()[0];
                self.broadcast_rows(g, rows)
            })],
            Op::BroadcastRows => vec![want(self, 0).then(|| self.sum_rows(g))],
            Op::SumSpatial => vec![want(self, 0).then(|| {
                let s = self.value(parents[0]).shape();
                let hw = (s[2], s[3]);
                self.broadcast_spatial(g, hw)
            })],
            Op::BroadcastSpatial => vec![want(self, 0).then(|| self.sum_spatial(g))],
            Op::SumPerSample => vec![want(self, 0).then(|| {
                let inner = self.value(parents[0]).shape()[1..].to_vec();
                self.broadcast_per_sample(g, &inner)
            })],
            Op::BroadcastPerSample => vec![want(self, 0).then(|| self.sum_per_sample(g))],
            Op::MulPerSample => {
                let (x, v) = (parents[0], parents[1]);
                let dx = want(self, 0).then(|| self.mul_per_sample(g, v));
                let dv = want(self, 1).then(|| {
                    let gx = self.mul(g, x);
                    self.sum_per_sample(gx)
                });
                vec![dx, dv]
            }
            Op::BiasAddChan => {
                let db = want(self, 1).then(|| {
                    let per = self.sum_spatial(g);
                    self.sum_rows(per)
                });
                vec![want(self, 0).then_some(g), db]
            }
            Op::MulChan => {
                let (x, s) = (parents[0], parents[1]);
                let dx = want(self, 0).then(|| self.mul_chan(g, s));
                let ds = want(self, 1).then(|| self.dot_spatial(g, x));
                vec![dx, ds]
            }
            Op::AddChan => {
                let dt = want(self, 1).then(|| self.sum_spatial(g));
                vec![want(self, 0).then_some(g), dt]
            }
            Op::DotSpatial => {
                let (a, b) = (parents[0], parents[1]);
                let da = want(self, 0).then(|| self.mul_chan(b, g));
                let db = want(self, 1).then(|| self.mul_chan(a, g));
                vec![da, db]
            }
            Op::AddRowBroadcast => {
                let db = want(self, 1).then(|| self.sum_rows(g));
                vec![want(self, 0).then_some(g), db]
            }
        }
    }
}
