use super::conv::{depthwise_backward, depthwise_forward, pointwise_backward, pointwise_forward};
use super::resize::{resize_backward, resize_forward};
use super::{SepConvVars, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A tensor value paired with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct DiffTensor {
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Sqrt(Var),
    Log(Var),
    Exp(Var),
    Sigmoid(Var),
    Tanh(Var),
    ClampMin(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    ChannelSum(Var),
    Broadcast(Var),
    Sum(Var),
    Gather(Var, Vec<u32>),
    PairDiff(Var, Vec<(u32, u32)>),
    Depthwise(Var, Var),
    Pointwise(Var, Var, Var),
    Resize(Var),
}

/// Records a forward computation so gradients can be pulled back from a
/// scalar root. One tape per forward pass; not shared across threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<(DiffTensor, Op)>,
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

    /// Registers an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push((DiffTensor { value, grad }, Op::Leaf));
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].0.value
    }

    pub fn grad(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].0.grad
    }

    pub fn node(&self, v: Var) -> &DiffTensor {
        &self.nodes[v.0].0
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].0.value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        Ok(self.leaf_with_op(value, op))
    }

    fn leaf_with_op(&mut self, value: Tensor, op: Op) -> Var {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push((DiffTensor { value, grad }, op));
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa} vs {sb}")));
        }
        Ok(sa)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let shape = self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(Tensor::from_vec(shape, data)?, op, name)
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::from_vec(t.shape(), data)?;
        self.push(value, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("scale", a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("add_scalar", a, Op::AddScalar(a), |x| x + s)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, Op::Abs(a), f64::abs)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, Op::Log(a), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Tanh => self.tanh(a),
        }
    }

    /// `max(a, lo)`; the gradient passes through where `a >= lo`.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Result<Var> {
        self.unary("clamp_min", a, Op::ClampMin(a, lo), |x| x.max(lo))
    }

    /// Channel-wise concatenation of spatially aligned tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first);
        let mut channels = 0;
        for p in parts {
            let s = self.shape(*p);
            if !s.same_spatial(&base) {
                return Err(Error::shape("concat", format!("{s} vs {base}")));
            }
            channels += s.channels;
        }
        let mut data = Vec::with_capacity(channels * base.plane());
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let value = Tensor::from_vec(base.with_channels(channels), data)?;
        self.push(value, Op::Concat(parts.to_vec()), "concat")
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.channels || len == 0 {
            return Err(Error::shape(
                "slice_channels",
                format!("{start}..{} of {s}", start + len),
            ));
        }
        let plane = s.plane();
        let data = self.value(a).data()[start * plane..(start + len) * plane].to_vec();
        let value = Tensor::from_vec(s.with_channels(len), data)?;
        self.push(value, Op::Slice(a, start), "slice_channels")
    }

    /// Sum over channels, `C x H x W -> 1 x H x W`.
    pub fn channel_sum(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let plane = s.plane();
        let t = self.value(a);
        let mut out = vec![0.0; plane];
        for c in 0..s.channels {
            for (o, v) in out.iter_mut().zip(t.channel(c)) {
                *o += v;
            }
        }
        let value = Tensor::from_vec(s.with_channels(1), out)?;
        self.push(value, Op::ChannelSum(a), "channel_sum")
    }

    /// Repeats a single-channel tensor `channels` times.
    pub fn broadcast_channels(&mut self, a: Var, channels: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.channels != 1 {
            return Err(Error::shape("broadcast_channels", format!("input {s}")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(channels * src.len());
        for _ in 0..channels {
            data.extend_from_slice(src);
        }
        let value = Tensor::from_vec(s.with_channels(channels), data)?;
        self.push(value, Op::Broadcast(a), "broadcast_channels")
    }

    /// Sum of all entries, as a `1 x 1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Picks pixels by flat spatial index: `C x H x W -> C x 1 x n`.
    pub fn gather(&mut self, a: Var, pixels: &[u32]) -> Result<Var> {
        let s = self.shape(a);
        let plane = s.plane();
        if let Some(bad) = pixels.iter().find(|p| **p as usize >= plane) {
            return Err(Error::shape("gather", format!("pixel {bad} outside {s}")));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(s.channels * pixels.len());
        for c in 0..s.channels {
            let ch = t.channel(c);
            data.extend(pixels.iter().map(|p| ch[*p as usize]));
        }
        let value = Tensor::from_vec(Shape::new(s.channels, 1, pixels.len()), data)?;
        self.push(value, Op::Gather(a, pixels.to_vec()), "gather")
    }

    /// `a[q] - a[p]` for each `(p, q)` pixel pair: `C x H x W -> C x 1 x n`.
    pub fn pair_diff(&mut self, a: Var, pairs: &[(u32, u32)]) -> Result<Var> {
        let s = self.shape(a);
        let plane = s.plane() as u32;
        if pairs.iter().any(|(p, q)| *p >= plane || *q >= plane) {
            return Err(Error::shape("pair_diff", format!("pair outside {s}")));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(s.channels * pairs.len());
        for c in 0..s.channels {
            let ch = t.channel(c);
            data.extend(pairs.iter().map(|(p, q)| ch[*q as usize] - ch[*p as usize]));
        }
        let value = Tensor::from_vec(Shape::new(s.channels, 1, pairs.len()), data)?;
        self.push(value, Op::PairDiff(a, pairs.to_vec()), "pair_diff")
    }

    /// Per-channel spatial correlation with a `C x K x K` kernel, zero padded
    /// so the output keeps the input size.
    pub fn depthwise_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if sk.channels != sx.channels || sk.height != sk.width || sk.height % 2 == 0 {
            return Err(Error::shape(
                "depthwise_conv",
                format!("input {sx} with kernel {sk}"),
            ));
        }
        let value = depthwise_forward(self.value(x), self.value(kernel));
        self.push(value, Op::Depthwise(x, kernel), "depthwise_conv")
    }

    /// Channel mixing `y[o] = sum_i w[o, i] x[i] + b[o]`.
    pub fn pointwise_conv(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(weight), self.shape(bias));
        if sw.height != sx.channels || sw.width != 1 || sb != Shape::new(sw.channels, 1, 1) {
            return Err(Error::shape(
                "pointwise_conv",
                format!("input {sx}, weight {sw}, bias {sb}"),
            ));
        }
        let value = pointwise_forward(self.value(x), self.value(weight), self.value(bias));
        self.push(value, Op::Pointwise(x, weight, bias), "pointwise_conv")
    }

    /// Separable 5x5 convolution: pointwise(depthwise(x)) + bias.
    pub fn conv2d_separable(&mut self, x: Var, w: &SepConvVars) -> Result<Var> {
        let sx = self.shape(x);
        let sk = self.shape(w.depthwise);
        if sk.channels != sx.channels {
            return Err(Error::shape(
                "conv2d_separable",
                format!("input {sx} but weights expect {} channels", sk.channels),
            ));
        }
        if sx.height == 0 || sx.width == 0 {
            return Err(Error::shape("conv2d_separable", format!("empty input {sx}")));
        }
        let d = self.depthwise_conv(x, w.depthwise)?;
        self.pointwise_conv(d, w.pointwise, w.bias)
    }

    pub fn bilinear_resize(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape(
                "bilinear_resize",
                format!("target {out_h}x{out_w}"),
            ));
        }
        let value = resize_forward(self.value(a), out_h, out_w);
        self.push(value, Op::Resize(a), "bilinear_resize")
    }

    /// Normalizes each pixel's channel vector to unit length,
    /// `v / sqrt(|v|^2 + eps)`.
    pub fn normalize_channels(&mut self, a: Var, eps: f64) -> Result<Var> {
        let c = self.shape(a).channels;
        let sq = self.mul(a, a)?;
        let ss = self.channel_sum(sq)?;
        let ss = self.add_scalar(ss, eps)?;
        let norm = self.sqrt(ss)?;
        let norm = self.broadcast_channels(norm, c)?;
        self.div(a, norm)
    }

    pub fn zero_grad(&mut self) {
        for (node, _) in &mut self.nodes {
            node.grad.data_mut().fill(0.0);
        }
    }

    /// Accumulates d(root)/d(node) into every node's gradient buffer.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be a scalar, got {}", self.shape(root)),
            ));
        }
        self.nodes[root.0].0.grad.data_mut()[0] += 1.0;
        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].1, Op::Leaf) {
                continue;
            }
            if self.nodes[i].0.grad.data().iter().all(|g| *g == 0.0) {
                continue;
            }
            let contributions = self.pullback(i);
            for (v, g) in contributions {
                for (dst, src) in self.nodes[v.0].0.grad.data_mut().iter_mut().zip(&g) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }

    fn pullback(&self, i: usize) -> Vec<(Var, Vec<f64>)> {
        let (node, op) = &self.nodes[i];
        let gy = node.grad.data();
        let y = node.value.data();
        let val = |v: &Var| self.value(*v).data();
        let map = |f: &dyn Fn(usize) -> f64| (0..gy.len()).map(f).collect::<Vec<f64>>();
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, gy.to_vec()), (*b, gy.to_vec())],
            Op::Sub(a, b) => vec![(*a, gy.to_vec()), (*b, gy.iter().map(|g| -g).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                vec![
                    (*a, map(&|k| gy[k] * vb[k])),
                    (*b, map(&|k| gy[k] * va[k])),
                ]
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(a), val(b));
                vec![
                    (*a, map(&|k| gy[k] / vb[k])),
                    (*b, map(&|k| -gy[k] * va[k] / (vb[k] * vb[k]))),
                ]
            }
            Op::Scale(a, s) => vec![(*a, gy.iter().map(|g| g * s).collect())],
            Op::AddScalar(a) => vec![(*a, gy.to_vec())],
            Op::Abs(a) => {
                let va = val(a);
                vec![(*a, map(&|k| gy[k] * sign0(va[k])))]
            }
            Op::Sqrt(a) => vec![(
                *a,
                map(&|k| if y[k] > 0.0 { gy[k] * 0.5 / y[k] } else { 0.0 }),
            )],
            Op::Log(a) => {
                let va = val(a);
                vec![(*a, map(&|k| gy[k] / va[k]))]
            }
            Op::Exp(a) => vec![(*a, map(&|k| gy[k] * y[k]))],
            Op::Sigmoid(a) => vec![(*a, map(&|k| gy[k] * y[k] * (1.0 - y[k])))],
            Op::Tanh(a) => vec![(*a, map(&|k| gy[k] * (1.0 - y[k] * y[k])))],
            Op::ClampMin(a, lo) => {
                let va = val(a);
                vec![(*a, map(&|k| if va[k] >= *lo { gy[k] } else { 0.0 }))]
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let n = self.shape(*p).numel();
                        let g = gy[offset..offset + n].to_vec();
                        offset += n;
                        (*p, g)
                    })
                    .collect()
            }
            Op::Slice(a, start) => {
                let s = self.shape(*a);
                let mut g = vec![0.0; s.numel()];
                let off = start * s.plane();
                g[off..off + gy.len()].copy_from_slice(gy);
                vec![(*a, g)]
            }
            Op::ChannelSum(a) => {
                let s = self.shape(*a);
                let mut g = Vec::with_capacity(s.numel());
                for _ in 0..s.channels {
                    g.extend_from_slice(gy);
                }
                vec![(*a, g)]
            }
            Op::Broadcast(a) => {
                let plane = self.shape(*a).plane();
                let mut g = vec![0.0; plane];
                for chunk in gy.chunks(plane) {
                    for (d, v) in g.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                vec![(*a, g)]
            }
            Op::Sum(a) => vec![(*a, vec![gy[0]; self.shape(*a).numel()])],
            Op::Gather(a, pixels) => {
                let s = self.shape(*a);
                let plane = s.plane();
                let n = pixels.len();
                let mut g = vec![0.0; s.numel()];
                for c in 0..s.channels {
                    for (k, p) in pixels.iter().enumerate() {
                        g[c * plane + *p as usize] += gy[c * n + k];
                    }
                }
                vec![(*a, g)]
            }
            Op::PairDiff(a, pairs) => {
                let s = self.shape(*a);
                let plane = s.plane();
                let n = pairs.len();
                let mut g = vec![0.0; s.numel()];
                for c in 0..s.channels {
                    for (k, (p, q)) in pairs.iter().enumerate() {
                        let v = gy[c * n + k];
                        g[c * plane + *q as usize] += v;
                        g[c * plane + *p as usize] -= v;
                    }
                }
                vec![(*a, g)]
            }
            Op::Depthwise(x, k) => {
                let (gx, gk) = depthwise_backward(self.value(*x), self.value(*k), &node.grad);
                vec![(*x, gx), (*k, gk)]
            }
            Op::Pointwise(x, w, b) => {
                let (gx, gw, gb) = pointwise_backward(self.value(*x), self.value(*w), &node.grad);
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::Resize(a) => vec![(*a, resize_backward(self.shape(*a), &node.grad))],
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
