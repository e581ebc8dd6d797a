//! Gradient tape.
//!
//! Every operation appends a node holding its output value and the handles of
//! its inputs, so node order is a topological order. `backward` walks the
//! nodes in reverse from the loss and accumulates gradients into leaves.
//! Interior gradients live only for the duration of one backward call;
//! repeated calls therefore add up at the leaves, as with any accumulating
//! autograd.

use super::conv::{conv_backward_input, conv_backward_weight, conv_forward, ConvGeom};
use super::tensor::{Real, Tensor};
use super::TensorError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics grouping of a normalization layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    /// Per sample and channel, over the spatial plane.
    Instance,
    /// Per channel, over batch and spatial plane (batch statistics only).
    Batch,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    /// `geom` describes the adjoint convolution whose input is this op's output.
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh(Var),
    Sigmoid(Var),
    Norm {
        x: Var,
        groups: Vec<Vec<usize>>,
        plane: usize,
        inv_std: Vec<T>,
    },
    Concat {
        a: Var,
        b: Var,
        n: usize,
        a_block: usize,
        b_block: usize,
    },
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Log(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Accumulated gradient, leaves only.
    grad: Option<Vec<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> TensorError {
    TensorError::ShapeMismatch(msg)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; gradients accumulate into it when `requires_grad`.
    pub fn var(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.var(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.var(value, false)
    }

    /// Copy of `v` that is cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First element of `v`, used to read scalar losses.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, name: &str) -> Result<Var, TensorError> {
        self.same_shape(a, b, name)?;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v * slope },
            Op::LeakyRelu { x, slope },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let s: T = v.data().iter().copied().sum();
        let m = s / T::from_f64(v.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Concatenation along the channel axis of two `[n, c, h, w]` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (na, ca, ha, wa) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(shape_err(format!(
                "concat_channels: {:?} and {:?} are incompatible",
                self.shape(a),
                self.shape(b)
            )));
        }
        let a_block = ca * ha * wa;
        let b_block = cb * hb * wb;
        let mut data = Vec::with_capacity(na * (a_block + b_block));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..na {
            data.extend_from_slice(&da[i * a_block..(i + 1) * a_block]);
            data.extend_from_slice(&db[i * b_block..(i + 1) * b_block]);
        }
        let value = Tensor::new(vec![na, ca + cb, ha, wa], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            value,
            Op::Concat {
                a,
                b,
                n: na,
                a_block,
                b_block,
            },
            rg,
        ))
    }

    fn check_bias(&self, b: Option<Var>, channels: usize, op: &str) -> Result<(), TensorError> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(shape_err(format!(
                    "{op}: bias shape {:?}, expected [{channels}]",
                    self.shape(b)
                )));
            }
        }
        Ok(())
    }

    fn add_bias(out: &mut [T], bias: &[T], n: usize, plane: usize) {
        let c = bias.len();
        for i in 0..n {
            for (ch, &bv) in bias.iter().enumerate() {
                for o in &mut out[(i * c + ch) * plane..][..plane] {
                    *o += bv;
                }
            }
        }
    }

    /// Cross-correlation with zero padding; `w` is `[cout, cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, kh, kw) = self.value(w).dims4()?;
        if wcin != cin {
            return Err(shape_err(format!(
                "conv2d: input has {cin} channels, kernel expects {wcin}"
            )));
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err(format!(
                "conv2d: kernel {kh}x{kw} stride {stride} does not fit input {h}x{wd} with padding {pad}"
            )));
        }
        self.check_bias(b, cout, "conv2d")?;
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        };
        let mut out = vec![T::zero(); geom.output_len()];
        conv_forward(self.value(x).data(), self.value(w).data(), &geom, &mut out);
        if let Some(b) = b {
            Self::add_bias(&mut out, self.value(b).data(), n, geom.oh * geom.ow);
        }
        let value = Tensor::new(vec![n, cout, geom.oh, geom.ow], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Transposed convolution; `w` is `[cin, cout, kh, kw]` and the output
    /// side is `(h−1)·stride + kh − 2·pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (wcin, cout, kh, kw) = self.value(w).dims4()?;
        if wcin != cin {
            return Err(shape_err(format!(
                "conv_transpose2d: input has {cin} channels, kernel expects {wcin}"
            )));
        }
        if stride == 0 || h == 0 || wd == 0 || (h - 1) * stride + kh <= 2 * pad || (wd - 1) * stride + kw <= 2 * pad {
            return Err(shape_err(format!(
                "conv_transpose2d: kernel {kh}x{kw} stride {stride} padding {pad} gives an empty output for {h}x{wd}"
            )));
        }
        self.check_bias(b, cout, "conv_transpose2d")?;
        let oh = (h - 1) * stride + kh - 2 * pad;
        let ow = (wd - 1) * stride + kw - 2 * pad;
        let geom = ConvGeom {
            n,
            cin: cout,
            h: oh,
            w: ow,
            cout: cin,
            kh,
            kw,
            stride,
            pad,
            oh: h,
            ow: wd,
        };
        let mut out = vec![T::zero(); geom.input_len()];
        conv_backward_input(self.value(x).data(), self.value(w).data(), &geom, &mut out);
        if let Some(b) = b {
            Self::add_bias(&mut out, self.value(b).data(), n, oh * ow);
        }
        let value = Tensor::new(vec![n, cout, oh, ow], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, rg))
    }

    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var, TensorError> {
        self.normalize(x, NormKind::Instance, eps)
    }

    pub fn batch_norm(&mut self, x: Var, eps: T) -> Result<Var, TensorError> {
        self.normalize(x, NormKind::Batch, eps)
    }

    /// Zero-mean unit-variance normalization without affine parameters.
    pub fn normalize(&mut self, x: Var, kind: NormKind, eps: T) -> Result<Var, TensorError> {
        if !(eps > T::zero()) {
            return Err(TensorError::NonPositiveEps(eps.as_f64()));
        }
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let groups: Vec<Vec<usize>> = match kind {
            NormKind::Instance => (0..n * c).map(|g| vec![g * plane]).collect(),
            NormKind::Batch => (0..c)
                .map(|ch| (0..n).map(|i| (i * c + ch) * plane).collect())
                .collect(),
        };
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(groups.len());
        for starts in &groups {
            let count = T::from_f64((starts.len() * plane) as f64);
            let mut mean = T::zero();
            for &s in starts {
                mean += src[s..s + plane].iter().copied().sum::<T>();
            }
            mean = mean / count;
            let mut var = T::zero();
            for &s in starts {
                for &v in &src[s..s + plane] {
                    var += (v - mean) * (v - mean);
                }
            }
            var = var / count;
            let inv = T::one() / (var + eps).sqrt();
            for &s in starts {
                for (o, &v) in out[s..s + plane].iter_mut().zip(&src[s..s + plane]) {
                    *o = (v - mean) * inv;
                }
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::Norm {
                x,
                groups,
                plane,
                inv_std,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Conv2d { x, w, b, geom } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        conv_backward_input(&g, nodes[w.0].value.data(), geom, gx);
                    }
                    if let Some(gw) = slot(&mut grads, nodes, *w) {
                        conv_backward_weight(nodes[x.0].value.data(), &g, geom, gw);
                    }
                    if let Some(gb) = b.and_then(|b| slot(&mut grads, nodes, b)) {
                        bias_grad(&g, gb, geom.n, geom.oh * geom.ow);
                    }
                }
                Op::ConvTranspose2d { x, w, b, geom } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        conv_forward(&g, nodes[w.0].value.data(), geom, gx);
                    }
                    if let Some(gw) = slot(&mut grads, nodes, *w) {
                        conv_backward_weight(&g, nodes[x.0].value.data(), geom, gw);
                    }
                    if let Some(gb) = b.and_then(|b| slot(&mut grads, nodes, b)) {
                        bias_grad(&g, gb, geom.n, geom.h * geom.w);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = nodes[x.0].value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((o, &gi), &v) in gx.iter_mut().zip(&g).zip(xv) {
                            *o += if v > T::zero() { gi } else { gi * *slope };
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((o, &gi), &yv) in gx.iter_mut().zip(&g).zip(y) {
                            *o += gi * (T::one() - yv * yv);
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((o, &gi), &yv) in gx.iter_mut().zip(&g).zip(y) {
                            *o += gi * yv * (T::one() - yv);
                        }
                    }
                }
                Op::Norm {
                    x,
                    groups,
                    plane,
                    inv_std,
                } => {
                    let y = node.value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (starts, &inv) in groups.iter().zip(inv_std) {
                            let m = T::from_f64((starts.len() * plane) as f64);
                            let mut sum_g = T::zero();
                            let mut sum_gy = T::zero();
                            for &s in starts {
                                for k in s..s + plane {
                                    sum_g += g[k];
                                    sum_gy += g[k] * y[k];
                                }
                            }
                            for &s in starts {
                                for k in s..s + plane {
                                    gx[k] += inv / m * (m * g[k] - sum_g - y[k] * sum_gy);
                                }
                            }
                        }
                    }
                }
                Op::Concat {
                    a,
                    b,
                    n,
                    a_block,
                    b_block,
                } => {
                    let stride = a_block + b_block;
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for i in 0..*n {
                            for (o, &gi) in ga[i * a_block..(i + 1) * a_block]
                                .iter_mut()
                                .zip(&g[i * stride..i * stride + a_block])
                            {
                                *o += gi;
                            }
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for i in 0..*n {
                            for (o, &gi) in gb[i * b_block..(i + 1) * b_block]
                                .iter_mut()
                                .zip(&g[i * stride + a_block..(i + 1) * stride])
                            {
                                *o += gi;
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for o in gx.iter_mut() {
                            *o += g[0];
                        }
                    }
                }
                Op::Mean(x) => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        let share = g[0] / T::from_f64(gx.len() as f64);
                        for o in gx.iter_mut() {
                            *o += share;
                        }
                    }
                }
                Op::Abs(x) => {
                    let xv = nodes[x.0].value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((o, &gi), &v) in gx.iter_mut().zip(&g).zip(xv) {
                            if v > T::zero() {
                                *o += gi;
                            } else if v < T::zero() {
                                *o -= gi;
                            }
                        }
                    }
                }
                Op::Log(x) => {
                    let xv = nodes[x.0].value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((o, &gi), &v) in gx.iter_mut().zip(&g).zip(xv) {
                            *o += gi / v;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(gv) = slot(&mut grads, nodes, v) {
                            for (o, &gi) in gv.iter_mut().zip(&g) {
                                *o += gi;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for (o, &gi) in ga.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for (o, &gi) in gb.iter_mut().zip(&g) {
                            *o -= gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((o, &gi), &y) in ga.iter_mut().zip(&g).zip(bv) {
                            *o += gi * y;
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for ((o, &gi), &y) in gb.iter_mut().zip(&g).zip(av) {
                            *o += gi * y;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (o, &gi) in gx.iter_mut().zip(&g) {
                            *o += gi * *c;
                        }
                    }
                }
                Op::AddScalar(x) => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (o, &gi) in gx.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = nodes[x.0].value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((o, &gi), &v) in gx.iter_mut().zip(&g).zip(xv) {
                            if v >= *lo && v <= *hi {
                                *o += gi;
                            }
                        }
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            match &mut self.nodes[i].grad {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

fn bias_grad<T: Real>(g: &[T], gb: &mut [T], n: usize, plane: usize) {
    let c = gb.len();
    for i in 0..n {
        for (ch, o) in gb.iter_mut().enumerate() {
            *o += g[(i * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
    }
}
