//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs, so append order is a topological order. `backward` walks the nodes
//! once in reverse.

use super::conv::{self, ConvShape};
use super::resize::{resize_bilinear, resize_bilinear_backward};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation discriminant, used in diagnostics and for backward-rule fault
/// injection in the gradient checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    ConvTranspose2d,
    Relu,
    Sigmoid,
    Add,
    Mul,
    MulMap,
    OneMinus,
    Concat,
    Resize,
    Sum,
    Scale,
    Mean,
    Bce,
    SoftIou,
}

impl OpKind {
    pub const ALL: [OpKind; 16] = [
        OpKind::Leaf,
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Add,
        OpKind::Mul,
        OpKind::MulMap,
        OpKind::OneMinus,
        OpKind::Concat,
        OpKind::Resize,
        OpKind::Sum,
        OpKind::Scale,
        OpKind::Mean,
        OpKind::Bce,
        OpKind::SoftIou,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::MulMap => "mul_broadcast",
            OpKind::OneMinus => "one_minus",
            OpKind::Concat => "concat_channels",
            OpKind::Resize => "resize_bilinear",
            OpKind::Sum => "sum",
            OpKind::Scale => "scale",
            OpKind::Mean => "mean",
            OpKind::Bce => "bce",
            OpKind::SoftIou => "soft_iou",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, shape: ConvShape },
    ConvTranspose2d { input: Var, weight: Var, bias: Var, shape: ConvShape },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulMap { features: Var, map: Var },
    OneMinus(Var),
    Concat(Vec<Var>),
    Resize(Var),
    Sum(Var),
    Scale(Var, T),
    Mean(Vec<Var>),
    Bce { pred: Var, target: Vec<T> },
    SoftIou { pred: Var, target: Vec<T>, smooth: f64 },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::MulMap { .. } => OpKind::MulMap,
            Op::OneMinus(_) => OpKind::OneMinus,
            Op::Concat(_) => OpKind::Concat,
            Op::Resize(_) => OpKind::Resize,
            Op::Sum(_) => OpKind::Sum,
            Op::Scale(..) => OpKind::Scale,
            Op::Mean(_) => OpKind::Mean,
            Op::Bce { .. } => OpKind::Bce,
            Op::SoftIou { .. } => OpKind::SoftIou,
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Lower clamp applied to probabilities inside the log of the BCE term.
pub const BCE_LOG_CLAMP: f64 = 1e-7;

/// A differentiation graph built during one forward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

/// Gradients of a scalar w.r.t. the leaves of a graph.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, `None` when the leaf does not track gradients or
    /// was unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Flips the sign of every gradient emitted by one kind of backward rule.
    /// Used to confirm that the gradient checker catches broken rules.
    pub fn inject_backward_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Inserts a leaf. Its stored gradient is not carried into the graph.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let mut t = t;
        t.zero_grad();
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Leaf that tracks gradients.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.leaf(t.clone(), true)
    }

    /// Leaf that does not track gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let shape = conv::conv2d_shape(x, w, b, stride, padding)?;
        let out = conv::conv2d_forward(x, w, b, &shape);
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, shape }, rg))
    }

    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let shape = conv::conv_transpose2d_shape(x, w, b, stride, padding)?;
        let out = conv::conv_transpose2d_forward(x, w, b, &shape);
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::ConvTranspose2d { input, weight, bias, shape }, rg))
    }

    /// The 4x4, stride-2, padding-1 transposed convolution that exactly
    /// doubles both spatial extents.
    pub fn upscale(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let ws = self.shape(weight);
        if ws.len() != 4 || ws[2] != 4 || ws[3] != 4 {
            return Err(Error::shape("upscale", format!("upscale needs a 4x4 kernel, got {ws:?}")));
        }
        self.conv_transpose2d(input, weight, bias, 2, 1)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Logistic sigmoid. Outputs are kept strictly inside `(0, 1)` even where
    /// the exact value rounds to an endpoint; NaN passes through.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let lo = T::min_positive_value();
        let hi = T::one() - T::epsilon() / T::lit(2.0);
        let out = self.value(x).map(|v| {
            let s = if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            };
            if s.is_nan() {
                s
            } else {
                s.max(lo).min(hi)
            }
        });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `features[n,c,h,w] * map[n,0,h,w]`.
    pub fn mul_broadcast(&mut self, features: Var, map: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(features).dims4("mul_broadcast")?;
        let (mn, mc, mh, mw) = self.value(map).dims4("mul_broadcast")?;
        if mc != 1 || (mn, mh, mw) != (n, h, w) {
            return Err(Error::shape(
                "mul_broadcast",
                format!("map {:?} does not match features {:?}", self.shape(map), self.shape(features)),
            ));
        }
        let plane = h * w;
        let (f, m) = (self.value(features).data(), self.value(map).data());
        let mut data = Vec::with_capacity(f.len());
        for (i, chunk) in f.chunks_exact(plane).enumerate() {
            let mp = &m[(i / c) * plane..][..plane];
            data.extend(chunk.iter().zip(mp).map(|(&a, &b)| a * b));
        }
        let out = Tensor::new([n, c, h, w], data)?;
        let rg = self.any_grad(&[features, map]);
        Ok(self.push(out, Op::MulMap { features, map }, rg))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() - v);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::OneMinus(x), rg)
    }

    /// Stacks rank-4 tensors along the channel axis in argument order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_channels", "empty list"))?;
        let (n, _, h, w) = self.value(first).dims4("concat_channels")?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("part {:?} does not match {:?}", self.shape(p), self.shape(first)),
                ));
            }
            total += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for i in 0..n {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape()[1] * plane;
                data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
            }
        }
        let out = Tensor::new([n, total, h, w], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = resize_bilinear(self.value(x), out_h, out_w)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Resize(x), rg))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::lit(s)), Op::Sum(x), rg)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Arithmetic mean of one-element tensors.
    pub fn mean(&mut self, terms: &[Var]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("mean of an empty set".into()));
        }
        let mut acc = 0.0;
        for &t in terms {
            acc += self.value(t).item()?.as_f64();
        }
        let rg = self.any_grad(terms);
        Ok(self.push(Tensor::scalar(T::lit(acc / terms.len() as f64)), Op::Mean(terms.to_vec()), rg))
    }

    fn check_target(&self, op: &'static str, pred: Var, target: &Tensor<T>) -> Result<()> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape(op, format!("prediction {:?} vs target {:?}", self.shape(pred), target.shape())));
        }
        if target.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::InvalidArgument(format!("{op}: target values must be 0 or 1")));
        }
        Ok(())
    }

    /// Mean binary cross-entropy over all elements.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        self.check_target("bce", pred, target)?;
        let p = self.value(pred).data();
        let mut acc = 0.0;
        for (&pv, &gv) in p.iter().zip(target.data()) {
            let (pv, gv) = (pv.as_f64(), gv.as_f64());
            acc -= gv * pv.max(BCE_LOG_CLAMP).ln() + (1.0 - gv) * (1.0 - pv).max(BCE_LOG_CLAMP).ln();
        }
        let loss = T::lit(acc / p.len() as f64);
        let rg = self.any_grad(&[pred]);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { pred, target: target.data().to_vec() }, rg))
    }

    /// Smoothed soft IoU loss `1 - (I + s) / (U + s)`, computed per image and
    /// averaged over the batch axis.
    pub fn soft_iou_loss(&mut self, pred: Var, target: &Tensor<T>, smooth: f64) -> Result<Var> {
        self.check_target("soft_iou", pred, target)?;
        let n = self.shape(pred).first().copied().unwrap_or(1);
        let per = self.value(pred).numel() / n;
        let p = self.value(pred).data();
        let mut acc = 0.0;
        for (pi, gi) in p.chunks_exact(per).zip(target.data().chunks_exact(per)) {
            let (inter, union) = iou_sums(pi, gi);
            acc += 1.0 - (inter + smooth) / (union + smooth);
        }
        let loss = T::lit(acc / n as f64);
        let rg = self.any_grad(&[pred]);
        Ok(self.push(Tensor::scalar(loss), Op::SoftIou { pred, target: target.data().to_vec(), smooth }, rg))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        if !lt.is_finite() {
            return Err(Error::NonFinite("backward"));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let sign = if self.fault == Some(node.op.kind()) { -T::one() } else { T::one() };
            let mut acc = Acc { nodes: &self.nodes, grads: &mut grads, sign };
            self.backward_node(node, &g, &mut acc);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], acc: &mut Acc<'_, T>) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, shape } | Op::ConvTranspose2d { input, weight, bias, shape } => {
                let need_x = self.nodes[input.0].requires_grad;
                let (x, w) = (self.value(*input), self.value(*weight));
                let (gx, gw, gb) = if node.op.kind() == OpKind::Conv2d {
                    conv::conv2d_backward(x, w, g, shape, need_x)
                } else {
                    conv::conv_transpose2d_backward(x, w, g, shape, need_x)
                };
                if let Some(gx) = gx {
                    acc.add(*input, gx);
                }
                acc.add(*weight, gw);
                acc.add(*bias, gb);
            }
            Op::Relu(x) => {
                let v = node.value.data();
                acc.add(*x, g.iter().zip(v).map(|(&g, &y)| if y > T::zero() { g } else { T::zero() }).collect());
            }
            Op::Sigmoid(x) => {
                let v = node.value.data();
                acc.add(*x, g.iter().zip(v).map(|(&g, &y)| g * y * (T::one() - y)).collect());
            }
            Op::Add(a, b) => {
                acc.add(*a, g.to_vec());
                acc.add(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc.add(*a, g.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                acc.add(*b, g.iter().zip(va).map(|(&g, &x)| g * x).collect());
            }
            Op::MulMap { features, map } => {
                let (_, c, h, w) = node.value.dims4("mul_broadcast").expect("rank 4");
                let plane = h * w;
                let (f, m) = (self.value(*features).data(), self.value(*map).data());
                if acc.wants(*features) {
                    let mut gf = Vec::with_capacity(g.len());
                    for (i, chunk) in g.chunks_exact(plane).enumerate() {
                        let mp = &m[(i / c) * plane..][..plane];
                        gf.extend(chunk.iter().zip(mp).map(|(&a, &b)| a * b));
                    }
                    acc.add(*features, gf);
                }
                if acc.wants(*map) {
                    let mut gm = vec![T::zero(); m.len()];
                    for (i, (gc, fc)) in g.chunks_exact(plane).zip(f.chunks_exact(plane)).enumerate() {
                        let dst = &mut gm[(i / c) * plane..][..plane];
                        for ((d, &gv), &fv) in dst.iter_mut().zip(gc).zip(fc) {
                            *d += gv * fv;
                        }
                    }
                    acc.add(*map, gm);
                }
            }
            Op::OneMinus(x) => acc.add(*x, g.iter().map(|&v| -v).collect()),
            Op::Concat(parts) => {
                let (n, total, h, w) = node.value.dims4("concat_channels").expect("rank 4");
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if acc.wants(p) {
                        let mut gp = Vec::with_capacity(n * pc * plane);
                        for i in 0..n {
                            gp.extend_from_slice(&g[(i * total + offset) * plane..][..pc * plane]);
                        }
                        acc.add(p, gp);
                    }
                    offset += pc;
                }
            }
            Op::Resize(x) => {
                let (n, c, h, w) = self.value(*x).dims4("resize_bilinear").expect("rank 4");
                let (_, _, oh, ow) = node.value.dims4("resize_bilinear").expect("rank 4");
                acc.add(*x, resize_bilinear_backward(g, n, c, h, w, oh, ow));
            }
            Op::Sum(x) => acc.add(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Scale(x, f) => acc.add(*x, g.iter().map(|&v| v * *f).collect()),
            Op::Mean(terms) => {
                let share = g[0] / T::lit(terms.len() as f64);
                for &t in terms {
                    acc.add(t, vec![share]);
                }
            }
            Op::Bce { pred, target } => {
                let p = self.value(*pred).data();
                let scale = g[0].as_f64() / p.len() as f64;
                let gp = p
                    .iter()
                    .zip(target)
                    .map(|(&pv, &gv)| {
                        let (pv, gv) = (pv.as_f64(), gv.as_f64());
                        let mut d = 0.0;
                        if pv > BCE_LOG_CLAMP {
                            d -= gv / pv;
                        }
                        if 1.0 - pv > BCE_LOG_CLAMP {
                            d += (1.0 - gv) / (1.0 - pv);
                        }
                        T::lit(d * scale)
                    })
                    .collect();
                acc.add(*pred, gp);
            }
            Op::SoftIou { pred, target, smooth } => {
                let pt = self.value(*pred);
                let n = pt.shape().first().copied().unwrap_or(1);
                let per = pt.numel() / n;
                let scale = g[0].as_f64() / n as f64;
                let mut gp = Vec::with_capacity(pt.numel());
                for (pi, gi) in pt.data().chunks_exact(per).zip(target.chunks_exact(per)) {
                    let (inter, union) = iou_sums(pi, gi);
                    let (num, den) = (inter + smooth, union + smooth);
                    // d/dp_j of -(I+s)/(U+s), with dI/dp_j = g_j and dU/dp_j = 1 - g_j
                    gp.extend(gi.iter().map(|&gv| {
                        let gv = gv.as_f64();
                        T::lit(-(gv * den - num * (1.0 - gv)) / (den * den) * scale)
                    }));
                }
                acc.add(*pred, gp);
            }
        }
    }
}

/// `(Σ p·g, Σ p + Σ g − Σ p·g)` in double precision.
fn iou_sums<T: Scalar>(p: &[T], g: &[T]) -> (f64, f64) {
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&pv, &gv) in p.iter().zip(g) {
        let (pv, gv) = (pv.as_f64(), gv.as_f64());
        inter += pv * gv;
        sp += pv;
        sg += gv;
    }
    (inter, sp + sg - inter)
}

struct Acc<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    sign: T,
}

impl<T: Scalar> Acc<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add(&mut self, v: Var, mut g: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        if self.sign != T::one() {
            g.iter_mut().for_each(|x| *x = *x * self.sign);
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}
