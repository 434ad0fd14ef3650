use crate::error::{Error, Result};

use super::conv::{self, ConvGeom};
use super::kernels::{self, SampleGeom};
use super::{Element, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Convolution implementation used when recording `conv2d`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgo {
    #[default]
    Im2col,
    Direct,
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    Elu(Var, T),
    Abs(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    AvgPool2(Var),
    Upsample2(Var),
    ConcatChannels(Vec<Var>),
    ConcatRows(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
    },
    ChannelAffine {
        x: Var,
        scale: Vec<T>,
    },
    GridSample {
        src: Var,
        coords: Var,
        geom: SampleGeom,
    },
    NnLoss {
        pred: Var,
        target: Var,
        sel: Vec<u32>,
    },
    Gram(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation. Operations append nodes in topological order;
/// [`Graph::backward`] walks them in reverse exactly once.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
    conv_algo: ConvAlgo,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{a:?}"), format!("{b:?}")))
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            conv_algo: ConvAlgo::default(),
        }
    }

    /// Switches the convolution algorithm for ops recorded from now on.
    pub fn set_conv_algo(&mut self, algo: ConvAlgo) {
        self.conv_algo = algo;
    }

    pub fn with_conv_algo(mut self, algo: ConvAlgo) -> Self {
        self.conv_algo = algo;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_raw(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    // ----- convolution -----

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            same_shape("conv2d bias", &[geom.out_channels], self.shape(b))?;
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = b.map(|b| self.value(b).data());
        let out = match self.conv_algo {
            ConvAlgo::Im2col => conv::forward_im2col(&geom, xs, ws, bs),
            ConvAlgo::Direct => conv::forward_direct(&geom, xs, ws, bs),
        };
        let value = Tensor::new(geom.output_shape(), out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv { x, w, b, geom }, &inputs))
    }

    // ----- elementwise -----

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if vb.numel() == 1 {
            let s = vb.data()[0];
            va.map(|x| f(x, s))
        } else if va.numel() == 1 {
            let s = va.data()[0];
            vb.map(|y| f(s, y))
        } else {
            return Err(Error::shape(
                name,
                format!("{:?} or a scalar", va.shape()),
                format!("{:?}", vb.shape()),
            ));
        };
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Var {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { alpha * x });
        self.push(v, Op::LeakyRelu(a, alpha), &[a])
    }

    pub fn elu(&mut self, a: Var, alpha: T) -> Var {
        let v = self.value(a).map(|x| {
            if x > T::zero() {
                x
            } else {
                alpha * (x.exp() - T::one())
            }
        });
        self.push(v, Op::Elu(a, alpha), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::abs);
        self.push(v, Op::Abs(a), &[a])
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    /// `x·scale[c] + shift[c]` per channel of a rank-4 tensor.
    pub fn channel_affine(&mut self, a: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if scale.len() != c || shift.len() != c {
            return Err(Error::shape("channel_affine", c, scale.len().max(shift.len())));
        }
        let src = self.value(a).data();
        let plane = h * w;
        let mut data = Vec::with_capacity(src.len());
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                data.extend(src[off..off + plane].iter().map(|&x| x * scale[ch] + shift[ch]));
            }
        }
        let v = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(
            v,
            Op::ChannelAffine {
                x: a,
                scale: scale.to_vec(),
            },
            &[a],
        ))
    }

    // ----- reductions -----

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / T::from_usize(t.numel()).unwrap());
        self.push(v, Op::Mean(a), &[a])
    }

    // ----- resampling -----

    /// 2×2 average pooling.
    pub fn downsample2(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("downsample2", "even extents", format!("{h}x{w}")));
        }
        let data = kernels::avg_pool2(self.value(a).data(), n * c, h, w);
        let v = Tensor::new([n, c, h / 2, w / 2], data)?;
        Ok(self.push(v, Op::AvgPool2(a), &[a]))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        let data = kernels::upsample2(self.value(a).data(), n * c, h, w);
        let v = Tensor::new([n, c, 2 * h, 2 * w], data)?;
        Ok(self.push(v, Op::Upsample2(a), &[a]))
    }

    // ----- shape ops -----

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels of nothing"))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{n}x?x{h}x{w}"),
                    format!("{pn}x{pc}x{ph}x{pw}"),
                ));
            }
            total += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let v = Tensor::new([n, total, h, w], data)?;
        Ok(self.push(v, Op::ConcatChannels(parts.to_vec()), parts))
    }

    /// Concatenation along the leading axis (used to fuse weight banks).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::shape("concat_rows", format!("?x{tail:?}"), format!("{s:?}")));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Channels `start..start+len` of a rank-4 tensor.
    pub fn narrow_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if start + len > c || len == 0 {
            return Err(Error::shape("narrow_channels", format!("range within {c}"), format!("{start}..{}", start + len)));
        }
        let plane = h * w;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let off = (b * c + start) * plane;
            data.extend_from_slice(&src[off..off + len * plane]);
        }
        let v = Tensor::new([n, len, h, w], data)?;
        Ok(self.push(v, Op::Narrow { x: a, start }, &[a]))
    }

    // ----- sampling, losses -----

    /// Bilinear sampling of `src` (`N×C×H×W`) at pixel coordinates
    /// `coords` (`N×2×H′×W′`, channel 0 = x, channel 1 = y). Coordinates
    /// are clamped to the image border. Differentiable in both inputs.
    pub fn grid_sample(&mut self, src: Var, coords: Var) -> Result<Var> {
        let (n, c, sh, sw) = self.value(src).dims4()?;
        let (cn, cc, oh, ow) = self.value(coords).dims4()?;
        if cn != n || cc != 2 {
            return Err(Error::shape(
                "grid_sample",
                format!("{n}x2xHxW coords"),
                format!("{:?}", self.shape(coords)),
            ));
        }
        let geom = SampleGeom {
            batch: n,
            channels: c,
            src_h: sh,
            src_w: sw,
            out_h: oh,
            out_w: ow,
        };
        let data = kernels::grid_sample_forward(&geom, self.value(src).data(), self.value(coords).data());
        let v = Tensor::new([n, c, oh, ow], data)?;
        Ok(self.push(v, Op::GridSample { src, coords, geom }, &[src, coords]))
    }

    /// Nearest-neighbour L1 loss with an odd `window`.
    pub fn nn_loss(&mut self, pred: Var, target: Var, window: usize) -> Result<Var> {
        if window.is_multiple_of(2) {
            return Err(Error::invalid(format!("nn_loss window must be odd, got {window}")));
        }
        same_shape("nn_loss", self.shape(pred), self.shape(target))?;
        let dims = self.value(pred).dims4()?;
        let (loss, sel) =
            kernels::nn_loss_forward(self.value(pred).data(), self.value(target).data(), dims, window);
        Ok(self.push(Tensor::scalar(loss), Op::NnLoss { pred, target, sel }, &[pred, target]))
    }

    /// Normalised Gram matrices, `N×C×C`.
    pub fn gram(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        let data = kernels::gram(self.value(a).data(), n, c, h * w);
        let v = Tensor::new([n, c, c], data)?;
        Ok(self.push(v, Op::Gram(a), &[a]))
    }

    // ----- backward -----

    /// Back-propagates from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", "scalar loss", format!("{:?}", self.shape(loss))));
        }
        self.backward_with(loss, Tensor::scalar(T::one()))
    }

    /// Back-propagates an explicit output gradient.
    pub fn backward_with(&mut self, out: Var, seed: Tensor<T>) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        same_shape("backward seed", self.shape(out), seed.shape())?;
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[out.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[out.0] = Some(seed.into_data());
        for i in (0..=out.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gy);
                continue;
            }
            self.propagate(i, &gy, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    /// Gradient of a broadcasting binary op operand.
    fn reduce_to(&self, v: Var, g: Vec<T>) -> Vec<T> {
        if self.nodes[v.0].value.numel() == 1 && g.len() != 1 {
            vec![g.into_iter().sum()]
        } else {
            g
        }
    }

    fn broadcast_get(t: &Tensor<T>, i: usize) -> T {
        if t.numel() == 1 {
            t.data()[0]
        } else {
            t.data()[i]
        }
    }

    fn propagate(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let unary = |x: Var, f: &dyn Fn(usize, T) -> T| -> (Var, Vec<T>) {
            (x, gy.iter().enumerate().map(|(k, &g)| f(k, g)).collect())
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let need = [
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                    b.is_some_and(|b| self.requires_grad(b)),
                ];
                let xs = self.value(*x).data();
                let ws = self.value(*w).data();
                let g = match self.conv_algo {
                    ConvAlgo::Im2col => conv::backward_im2col(geom, xs, ws, gy, need),
                    ConvAlgo::Direct => conv::backward_direct(geom, xs, ws, gy, need),
                };
                if let Some(dx) = g.input {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = g.weight {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, g.bias) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                let ga = self.reduce_to(*a, gy.to_vec());
                let gb = self.reduce_to(*b, gy.iter().map(|&g| g * sign).collect());
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = gy
                        .iter()
                        .enumerate()
                        .map(|(k, &g)| g * Self::broadcast_get(vb, k))
                        .collect();
                    let ga = self.reduce_to(*a, ga);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = gy
                        .iter()
                        .enumerate()
                        .map(|(k, &g)| g * Self::broadcast_get(va, k))
                        .collect();
                    let gb = self.reduce_to(*b, gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => {
                let (v, g) = unary(*a, &|_, g| g * *s);
                self.accumulate(grads, v, g);
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, gy.to_vec()),
            Op::Sigmoid(a) => {
                let (v, g) = unary(*a, &|k, g| g * y[k] * (T::one() - y[k]));
                self.accumulate(grads, v, g);
            }
            Op::Tanh(a) => {
                let (v, g) = unary(*a, &|k, g| g * (T::one() - y[k] * y[k]));
                self.accumulate(grads, v, g);
            }
            Op::LeakyRelu(a, alpha) => {
                let x = self.value(*a).data();
                let (v, g) = unary(*a, &|k, g| if x[k] > T::zero() { g } else { g * *alpha });
                self.accumulate(grads, v, g);
            }
            Op::Elu(a, alpha) => {
                let x = self.value(*a).data();
                let (v, g) = unary(*a, &|k, g| {
                    if x[k] > T::zero() {
                        g
                    } else {
                        g * *alpha * x[k].exp()
                    }
                });
                self.accumulate(grads, v, g);
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                let (v, g) = unary(*a, &|k, g| {
                    if x[k] > T::zero() {
                        g
                    } else if x[k] < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, v, g);
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                let (v, g) = unary(*a, &|k, g| g * sigmoid(x[k]));
                self.accumulate(grads, v, g);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![gy[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let g = gy[0] / T::from_usize(n).unwrap();
                self.accumulate(grads, *a, vec![g; n]);
            }
            Op::AvgPool2(a) => {
                let (n, c, h, w) = self.value(*a).dims4().unwrap();
                let g = kernels::avg_pool2_backward(gy, n * c, h, w);
                self.accumulate(grads, *a, g);
            }
            Op::Upsample2(a) => {
                let (n, c, h, w) = self.value(*a).dims4().unwrap();
                let g = kernels::upsample2_backward(gy, n * c, h, w);
                self.accumulate(grads, *a, g);
            }
            Op::ConcatChannels(parts) => {
                let (n, total, h, w) = node.value.dims4().unwrap();
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.requires_grad(p) {
                        let mut g = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            let s = (b * total + offset) * plane;
                            g.extend_from_slice(&gy[s..s + c * plane]);
                        }
                        self.accumulate(grads, p, g);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, gy[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, start } => {
                let (n, c, h, w) = self.value(*x).dims4().unwrap();
                let len = node.value.shape()[1];
                let plane = h * w;
                let mut g = vec![T::zero(); n * c * plane];
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    g[dst..dst + len * plane].copy_from_slice(&gy[src..src + len * plane]);
                }
                self.accumulate(grads, *x, g);
            }
            Op::ChannelAffine { x, scale } => {
                let (_, c, h, w) = self.value(*x).dims4().unwrap();
                let plane = h * w;
                let (v, g) = unary(*x, &|k, g| g * scale[(k / plane) % c]);
                self.accumulate(grads, v, g);
            }
            Op::GridSample { src, coords, geom } => {
                let need = [self.requires_grad(*src), self.requires_grad(*coords)];
                let (ds, dc) = kernels::grid_sample_backward(
                    geom,
                    self.value(*src).data(),
                    self.value(*coords).data(),
                    gy,
                    need,
                );
                if let Some(ds) = ds {
                    self.accumulate(grads, *src, ds);
                }
                if let Some(dc) = dc {
                    self.accumulate(grads, *coords, dc);
                }
            }
            Op::NnLoss { pred, target, sel } => {
                let need = [self.requires_grad(*pred), self.requires_grad(*target)];
                let dims = self.value(*pred).dims4().unwrap();
                let (dp, dt) = kernels::nn_loss_backward(
                    self.value(*pred).data(),
                    self.value(*target).data(),
                    dims,
                    sel,
                    gy[0],
                    need,
                );
                if let Some(dp) = dp {
                    self.accumulate(grads, *pred, dp);
                }
                if let Some(dt) = dt {
                    self.accumulate(grads, *target, dt);
                }
            }
            Op::Gram(a) => {
                let (n, c, h, w) = self.value(*a).dims4().unwrap();
                let g = kernels::gram_backward(self.value(*a).data(), gy, n, c, h * w);
                self.accumulate(grads, *a, g);
            }
        }
    }
}

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Element>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
