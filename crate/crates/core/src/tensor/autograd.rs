use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeometry};
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Logs are clamped below at `ln(1e-12)` in the cross-entropy op.
pub(crate) const LOG_FLOOR: f64 = -27.631_021_115_928_547;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvParams {
    pub const fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        ConvParams {
            stride,
            dilation,
            padding,
        }
    }
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams::new(1, 1, 0)
    }
}

enum Op<T: Scalar> {
    Leaf,
    Add(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Relu(Var<T>),
    Softmax(Var<T>),
    Conv {
        input: Var<T>,
        kernel: Var<T>,
        bias: Option<Var<T>>,
        params: ConvParams,
    },
    Upsample(Var<T>, usize),
    Sum(Var<T>),
    Scale(Var<T>, T),
    PixelCe {
        logits: Var<T>,
        targets: Vec<T>,
        weights: Vec<T>,
        total: T,
    },
}

impl<T: Scalar> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Relu(a) | Op::Softmax(a) | Op::Upsample(a, _) | Op::Sum(a) | Op::Scale(a, _) => {
                vec![a]
            }
            Op::Conv {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut p = vec![input, kernel];
                p.extend(bias.as_ref());
                p
            }
            Op::PixelCe { logits, .. } => vec![logits],
        }
    }
}

struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// A tensor participating in reverse-mode differentiation.
///
/// Cloning is cheap; clones share the same node. A graph is built by calling
/// ops on `Var`s and discarded by dropping the result.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("requires_grad", &self.0.requires_grad)
            .field("value", &self.0.value)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    fn make(value: Tensor<T>, op: Op<T>, name: &str) -> Result<Self> {
        value.ensure_finite(name)?;
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op,
        })))
    }

    fn leaf_with(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op: Op::Leaf,
        }))
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf_with(value, false)
    }

    /// A trainable leaf whose gradient is reported by [`Var::backward`].
    pub fn param(value: Tensor<T>) -> Self {
        Self::leaf_with(value, true)
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> Shape {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("add", self, other)?;
        let data = zip_map(self.value(), other.value(), |a, b| a + b);
        Var::make(
            Tensor::new(self.shape(), data)?,
            Op::Add(self.clone(), other.clone()),
            "add",
        )
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("multiply", self, other)?;
        let data = zip_map(self.value(), other.value(), |a, b| a * b);
        Var::make(
            Tensor::new(self.shape(), data)?,
            Op::Mul(self.clone(), other.clone()),
            "multiply",
        )
    }

    pub fn relu(&self) -> Result<Var<T>> {
        let out = self.value().map(|v| if v > T::zero() { v } else { T::zero() });
        Var::make(out, Op::Relu(self.clone()), "relu")
    }

    /// Softmax across the channel axis at every `(n, y, x)`.
    pub fn softmax_channels(&self) -> Result<Var<T>> {
        let s = self.shape();
        let x = self.value().data();
        let mut out = vec![T::zero(); s.numel()];
        let plane = s.plane();
        for n in 0..s.n {
            let base = n * s.c * plane;
            for p in 0..plane {
                let mut max = T::neg_infinity();
                for c in 0..s.c {
                    max = max.max(x[base + c * plane + p]);
                }
                let mut total = T::zero();
                for c in 0..s.c {
                    let e = (x[base + c * plane + p] - max).exp();
                    out[base + c * plane + p] = e;
                    total += e;
                }
                for c in 0..s.c {
                    out[base + c * plane + p] = out[base + c * plane + p] / total;
                }
            }
        }
        Var::make(Tensor::new(s, out)?, Op::Softmax(self.clone()), "softmax")
    }

    /// 2-D cross-correlation. `kernel` is `(C_out, C_in, kh, kw)`, `bias` is `(1, C_out, 1, 1)`.
    pub fn conv2d(&self, kernel: &Var<T>, bias: Option<&Var<T>>, params: ConvParams) -> Result<Var<T>> {
        let (is, ks) = (self.shape(), kernel.shape());
        if params.stride == 0 || params.dilation == 0 {
            return Err(Error::shape("conv2d", "stride and dilation must be >= 1"));
        }
        if ks.c != is.c {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {ks} expects {} input channels, input is {is}", ks.c),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != Shape::new(1, ks.n, 1, 1) {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {} does not match {} output channels", b.shape(), ks.n),
                ));
            }
        }
        let g = ConvGeometry::new(is, ks, params).ok_or_else(|| {
            Error::shape("conv2d", format!("kernel {ks} larger than padded input {is}"))
        })?;
        let out = kernels::conv_forward(
            &g,
            is.n,
            self.value().data(),
            kernel.value().data(),
            bias.map(|b| b.value().data()),
        );
        Var::make(
            Tensor::new(Shape::new(is.n, ks.n, g.ho, g.wo), out)?,
            Op::Conv {
                input: self.clone(),
                kernel: kernel.clone(),
                bias: bias.cloned(),
                params,
            },
            "conv2d",
        )
    }

    /// Bilinear upsampling by an integer factor with half-pixel centers.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Var<T>> {
        if factor == 0 {
            return Err(Error::shape("upsample", "factor must be >= 1"));
        }
        let s = self.shape();
        let out = kernels::upsample_forward(s, factor, self.value().data());
        Var::make(
            Tensor::new(Shape::new(s.n, s.c, s.h * factor, s.w * factor), out)?,
            Op::Upsample(self.clone(), factor),
            "upsample",
        )
    }

    pub fn sum(&self) -> Result<Var<T>> {
        Var::make(Tensor::scalar(self.value().sum()), Op::Sum(self.clone()), "sum")
    }

    pub fn scale(&self, k: T) -> Result<Var<T>> {
        Var::make(self.value().map(|v| v * k), Op::Scale(self.clone(), k), "scale")
    }

    pub fn mean(&self) -> Result<Var<T>> {
        let n = T::of(self.value().numel() as f64);
        self.sum()?.scale(T::one() / n)
    }

    /// Weighted two-class cross-entropy against soft foreground targets.
    ///
    /// `self` holds logits `(N, 2, H, W)`, channel 0 background and channel 1
    /// foreground. `targets` and `weights` have one entry per pixel
    /// (`N·H·W`). The result is `Σ wᵢ·H(pᵢ, qᵢ) / Σ wᵢ`.
    pub fn pixel_cross_entropy(&self, targets: &[T], weights: &[T]) -> Result<Var<T>> {
        let s = self.shape();
        if s.c != 2 {
            return Err(Error::shape("cross_entropy", format!("expected 2 channels, got {s}")));
        }
        let pixels = s.n * s.plane();
        if targets.len() != pixels || weights.len() != pixels {
            return Err(Error::shape(
                "cross_entropy",
                format!(
                    "{} targets / {} weights for {pixels} pixels",
                    targets.len(),
                    weights.len()
                ),
            ));
        }
        let total: T = weights.iter().copied().sum();
        if total <= T::zero() {
            return Err(Error::shape("cross_entropy", "weights sum to zero"));
        }
        let terms = pixel_ce_terms(self.value(), targets);
        let loss: T = terms
            .iter()
            .zip(weights)
            .map(|(&ce, &w)| ce * w)
            .sum::<T>()
            / total;
        Var::make(
            Tensor::scalar(loss),
            Op::PixelCe {
                logits: self.clone(),
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                total,
            },
            "cross_entropy",
        )
    }

    /// Gradients of this scalar with respect to every trainable leaf it depends on.
    ///
    /// Each call computes fresh gradients; nothing accumulates between calls.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.shape() != Shape::scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Usage(
                "loss does not depend on any trainable tensor".into(),
            ));
        }
        let order = self.topological_order();
        let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
        grads.insert(self.id(), Tensor::scalar(T::one()));
        let mut out = HashMap::new();
        for var in order.iter().rev() {
            let Some(grad) = grads.remove(&var.id()) else {
                continue;
            };
            grad.ensure_finite("backward")?;
            if let Op::Leaf = var.0.op {
                out.insert(var.id(), grad);
                continue;
            }
            for (parent, g) in var.local_grads(&grad)? {
                if !parent.requires_grad() {
                    continue;
                }
                match grads.get_mut(&parent.id()) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    None => {
                        grads.insert(parent.id(), g);
                    }
                }
            }
        }
        Ok(Gradients { map: out })
    }

    fn topological_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((var, expanded)) = stack.pop() {
            if expanded {
                order.push(var);
                continue;
            }
            if !seen.insert(var.id()) {
                continue;
            }
            stack.push((var.clone(), true));
            for p in var.0.op.parents() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    fn local_grads(&self, grad: &Tensor<T>) -> Result<Vec<(Var<T>, Tensor<T>)>> {
        let g = grad.data();
        Ok(match &self.0.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a.clone(), grad.clone()), (b.clone(), grad.clone())],
            Op::Mul(a, b) => {
                let ga = zip_map_slice(g, b.value().data(), |g, y| g * y);
                let gb = zip_map_slice(g, a.value().data(), |g, x| g * x);
                vec![
                    (a.clone(), Tensor::new(a.shape(), ga)?),
                    (b.clone(), Tensor::new(b.shape(), gb)?),
                ]
            }
            Op::Relu(a) => {
                let ga = zip_map_slice(g, a.value().data(), |g, x| {
                    if x > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                });
                vec![(a.clone(), Tensor::new(a.shape(), ga)?)]
            }
            Op::Softmax(a) => {
                let s = a.shape();
                let y = self.value().data();
                let plane = s.plane();
                let mut ga = vec![T::zero(); s.numel()];
                for n in 0..s.n {
                    let base = n * s.c * plane;
                    for p in 0..plane {
                        let mut dot = T::zero();
                        for c in 0..s.c {
                            let i = base + c * plane + p;
                            dot += g[i] * y[i];
                        }
                        for c in 0..s.c {
                            let i = base + c * plane + p;
                            ga[i] = y[i] * (g[i] - dot);
                        }
                    }
                }
                vec![(a.clone(), Tensor::new(s, ga)?)]
            }
            Op::Conv {
                input,
                kernel,
                bias,
                params,
            } => {
                let geom = ConvGeometry::new(input.shape(), kernel.shape(), *params)
                    .expect("geometry validated at construction");
                let need = [
                    input.requires_grad(),
                    kernel.requires_grad(),
                    bias.as_ref().is_some_and(|b| b.requires_grad()),
                ];
                let cg = kernels::conv_backward(
                    &geom,
                    input.shape().n,
                    input.value().data(),
                    kernel.value().data(),
                    g,
                    need,
                );
                let mut out = Vec::with_capacity(3);
                if let Some(d) = cg.input {
                    out.push((input.clone(), Tensor::new(input.shape(), d)?));
                }
                if let Some(d) = cg.kernel {
                    out.push((kernel.clone(), Tensor::new(kernel.shape(), d)?));
                }
                if let (Some(d), Some(b)) = (cg.bias, bias) {
                    out.push((b.clone(), Tensor::new(b.shape(), d)?));
                }
                out
            }
            Op::Upsample(a, factor) => {
                let ga = kernels::upsample_backward(a.shape(), *factor, g);
                vec![(a.clone(), Tensor::new(a.shape(), ga)?)]
            }
            Op::Sum(a) => vec![(a.clone(), Tensor::full(a.shape(), g[0]))],
            Op::Scale(a, k) => vec![(a.clone(), grad.map(|v| v * *k))],
            Op::PixelCe {
                logits,
                targets,
                weights,
                total,
            } => {
                let s = logits.shape();
                let z = logits.value().data();
                let plane = s.plane();
                let floor = T::of(LOG_FLOOR);
                let scale = g[0] / *total;
                let mut gz = vec![T::zero(); s.numel()];
                for n in 0..s.n {
                    for p in 0..plane {
                        let i = n * plane + p;
                        let w = weights[i];
                        if w == T::zero() {
                            continue;
                        }
                        let i0 = n * 2 * plane + p;
                        let i1 = i0 + plane;
                        let (lq0, lq1) = two_class_log_probs(z[i0], z[i1]);
                        let (q0, q1) = (lq0.exp(), lq1.exp());
                        // active targets: a clamped log has zero derivative
                        let t1 = if lq1 > floor { targets[i] } else { T::zero() };
                        let t0 = if lq0 > floor { T::one() - targets[i] } else { T::zero() };
                        let tsum = t0 + t1;
                        let k = scale * w;
                        gz[i0] = k * (q0 * tsum - t0);
                        gz[i1] = k * (q1 * tsum - t1);
                    }
                }
                vec![(logits.clone(), Tensor::new(s, gz)?)]
            }
        })
    }
}

/// Stable `(log q_bg, log q_fg)` for a pair of logits.
#[inline]
pub(crate) fn two_class_log_probs<T: Scalar>(z0: T, z1: T) -> (T, T) {
    let m = z0.max(z1);
    let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
    (z0 - lse, z1 - lse)
}

/// Per-pixel `−[p·log q_fg + (1−p)·log q_bg]` with logs clamped at `ln 1e-12`.
pub(crate) fn pixel_ce_terms<T: Scalar>(logits: &Tensor<T>, targets: &[T]) -> Vec<T> {
    let s = logits.shape();
    let z = logits.data();
    let plane = s.plane();
    let floor = T::of(LOG_FLOOR);
    let mut out = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        for p in 0..plane {
            let i0 = n * 2 * plane + p;
            let (lq0, lq1) = two_class_log_probs(z[i0], z[i0 + plane]);
            let pt = targets[n * plane + p];
            out.push(-(pt * lq1.max(floor) + (T::one() - pt) * lq0.max(floor)));
        }
    }
    out
}

/// Gradients keyed by the trainable leaves of one backward pass.
pub struct Gradients<T: Scalar> {
    map: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.map.get(&var.id())
    }

    /// Gradient for `var`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{} vs {}", a.shape(), b.shape())))
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    zip_map_slice(a.data(), b.data(), f)
}

fn zip_map_slice<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
