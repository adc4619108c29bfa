//! Reverse-mode differentiation over a linear operation record.
//!
//! Every primitive appends one node holding its forward value. Nodes are only
//! ever appended, so node order is a topological order and `backward` is a
//! single reverse sweep. Gradients of leaf tensors created with
//! `requires_grad` accumulate across `backward` calls until `zero_grad`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Ln(Var),
    Clamp { x: Var, lo: T, hi: T },
    LogSoftmax { x: Var, axis: usize },
    Mean { x: Var, axes: Vec<usize> },
    Sum(Var),
    Upsample2x(Var),
    AvgPool2x2(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    MaskedSum { x: Var, mask: Vec<bool> },
    MaskedMean { x: Var, mask: Vec<bool>, count: usize },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Concat(parts) => parts.clone(),
            Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Softplus(x)
            | Op::Abs(x)
            | Op::Ln(x)
            | Op::Clamp { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::Mean { x, .. }
            | Op::Sum(x)
            | Op::Upsample2x(x)
            | Op::AvgPool2x2(x)
            | Op::Reshape(x)
            | Op::MaskedSum { x, .. }
            | Op::MaskedMean { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Operation record for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// Output shape of a reduction over `axes` and, for every input element, the
/// flat index of the output element it contributes to.
fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    let mut map = Vec::with_capacity(numel(shape));
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..numel(shape) {
        let mut flat = 0;
        for (axis, &i) in idx.iter().enumerate() {
            if !axes.contains(&axis) {
                flat = flat * shape[axis] + i;
            }
        }
        map.push(flat);
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    (out_shape, map)
}

fn spatial_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, shape, &[]));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    Ok((numel(&shape[..shape.len() - 2]), h, w))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy)]
struct Accumulator<T> {
    sum: T,
    carry: T,
}

impl<T: Scalar> Accumulator<T> {
    fn new() -> Self {
        Accumulator {
            sum: T::zero(),
            carry: T::zero(),
        }
    }

    fn add(&mut self, v: T) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> T {
        self.sum + self.carry
    }
}

fn compensated_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut acc = Accumulator::new();
    values.into_iter().for_each(|v| acc.add(v));
    acc.total()
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Clears all accumulated gradients.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let inputs = op.inputs();
        if cfg!(debug_assertions) && inputs.iter().all(|v| self.value(*v).all_finite()) {
            debug_assert!(
                value.all_finite(),
                "non-finite output from finite inputs in {op:?}",
                op = std::mem::discriminant(&op)
            );
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, rec: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, rec))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, rec: Op<T>) -> Var {
        let value = self.value(x).map(f);
        self.push(value, rec)
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::MulScalar(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.mul_scalar(x, -T::one())
    }

    /// Pointwise affine map over the leading (channel) axis.
    ///
    /// `x` is `[C, ...]`, `w` is `[O, C]`, `b` is `[O]`; the result is
    /// `[O, ...]` with `out[o, s] = sum_c w[o, c] * x[c, s] + b[o]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.is_empty() || ws.len() != 2 || ws[1] != xs[0] {
            return Err(Error::shape("affine", &xs, &ws));
        }
        if bs != [ws[0]] {
            return Err(Error::shape("affine", &ws, &bs));
        }
        let (out_ch, in_ch) = (ws[0], ws[1]);
        let s = numel(&xs[1..]);
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(out_ch * s);
        for &bo in bias {
            out.extend(std::iter::repeat_n(bo, s));
        }
        T::gemm(
            out_ch,
            in_ch,
            s,
            T::one(),
            self.value(w).data(),
            in_ch as isize,
            1,
            self.value(x).data(),
            s as isize,
            1,
            T::one(),
            &mut out,
            s as isize,
            1,
        );
        let mut shape = xs;
        shape[0] = out_ch;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Affine { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Ln(x))
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    /// Which branch every element of every relu, abs and clamp input took:
    /// `-1`, `0` or `1` per element, in recording order. Two evaluations with
    /// equal patterns lie on the same smooth piece of the recorded function.
    pub fn branch_pattern(&self) -> Vec<i8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let (x, side): (Var, Box<dyn Fn(T) -> i8>) = match &node.op {
                Op::Relu(x) => (*x, Box::new(|v: T| i8::from(v > T::zero()))),
                Op::Abs(x) => (*x, Box::new(|v: T| if v < T::zero() { -1 } else { 1 })),
                Op::Clamp { x, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    (*x, Box::new(move |v: T| if v < lo { -1 } else if v > hi { 1 } else { 0 }))
                }
                _ => continue,
            };
            out.extend(self.value(x).data().iter().map(|&v| side(v)));
        }
        out
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("log_softmax", &shape, &[axis]));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let lse = max + (0..n).map(|j| (src[at(j)] - max).exp()).sum::<T>().ln();
                for j in 0..n {
                    out[at(j)] = src[at(j)] - lse;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::LogSoftmax { x, axis }))
    }

    /// Arithmetic mean over the listed axes; the reduced axes are removed.
    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&a| a >= shape.len()) {
            return Err(Error::shape("mean_axes", &shape, &axes));
        }
        let (out_shape, map) = reduction_map(&shape, &axes);
        let count = T::from_usize(axes.iter().map(|&a| shape[a]).product()).unwrap();
        let mut acc = vec![Accumulator::new(); numel(&out_shape)];
        for (&v, &slot) in self.value(x).data().iter().zip(&map) {
            acc[slot].add(v);
        }
        let out: Vec<T> = acc.into_iter().map(|a| a.total() / count).collect();
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Mean { x, axes }))
    }

    /// Mean over the last two (spatial) axes.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(Error::shape("spatial_mean", self.shape(x), &[]));
        }
        self.mean_axes(x, &[rank - 2, rank - 1])
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.mean_axes(x, &axes)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = compensated_sum(self.value(x).data().iter().copied());
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Nearest-neighbour 2x upsampling of the last two axes.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (planes, h, w) = spatial_dims("upsample2x", &shape)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len() * 4);
        for p in 0..planes {
            for r in 0..2 * h {
                let row = &src[p * h * w + (r / 2) * w..][..w];
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
        let mut out_shape = shape;
        let rank = out_shape.len();
        out_shape[rank - 2] *= 2;
        out_shape[rank - 1] *= 2;
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Upsample2x(x)))
    }

    /// 2x2 mean pooling of the last two axes; both must be even.
    pub fn avg_pool2x2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (planes, h, w) = spatial_dims("avg_pool2x2", &shape)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avg_pool2x2", &shape, &[2, 2]));
        }
        let src = self.value(x).data();
        let quarter = T::lit(0.25);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(src.len() / 4);
        for p in 0..planes {
            let base = p * h * w;
            for r in 0..oh {
                for c in 0..ow {
                    let at = |dr: usize, dc: usize| src[base + (2 * r + dr) * w + 2 * c + dc];
                    out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter);
                }
            }
        }
        let mut out_shape = shape;
        let rank = out_shape.len();
        out_shape[rank - 2] = oh;
        out_shape[rank - 1] = ow;
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::AvgPool2x2(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Concatenates along axis 0; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::shape("concat", self.shape(*first), s));
            }
            lead += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    fn check_mask(&self, op: &'static str, x: Var, mask: &[bool]) -> Result<()> {
        if mask.len() != self.value(x).len() {
            return Err(Error::shape(op, self.shape(x), &[mask.len()]));
        }
        Ok(())
    }

    /// Sum of the elements selected by `mask` (one flag per element).
    pub fn masked_sum(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        self.check_mask("masked_sum", x, mask)?;
        let total = compensated_sum(self.value(x).data().iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v));
        let mask = mask.to_vec();
        Ok(self.push(Tensor::scalar(total), Op::MaskedSum { x, mask }))
    }

    /// Mean of the elements selected by `mask`; errors when nothing is selected.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        self.check_mask("masked_mean", x, mask)?;
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask("masked_mean"));
        }
        let total = compensated_sum(self.value(x).data().iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v));
        let value = Tensor::scalar(total / T::from_usize(count).unwrap());
        let mask = mask.to_vec();
        Ok(self.push(value, Op::MaskedMean { x, mask, count }))
    }

    /// Back-propagates from a one-element `loss`, adding `d loss / d leaf` into
    /// the gradient of every reachable leaf that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Backward("empty tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward("loss is not a scalar"));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        for (i, slot) in adj.into_iter().enumerate() {
            if let Some(g) = slot {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let len = |v: &Var| self.nodes[v.0].value.len();
        let val = |v: &Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        macro_rules! pointwise {
            ($x:expr, |$k:ident| $d:expr) => {{
                if needs($x) {
                    let n = len($x);
                    let acc = accumulate(&mut adj[$x.0], n);
                    for $k in 0..n {
                        acc[$k] += g[$k] * $d;
                    }
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                pointwise!(a, |k| T::one());
                pointwise!(b, |k| T::one());
            }
            Op::Sub(a, b) => {
                pointwise!(a, |k| T::one());
                pointwise!(b, |k| -T::one());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                pointwise!(a, |k| vb[k]);
                pointwise!(b, |k| va[k]);
            }
            Op::AddScalar(x) => pointwise!(x, |k| T::one()),
            Op::MulScalar(x, c) => pointwise!(x, |k| *c),
            Op::Relu(x) => {
                let vx = val(x);
                pointwise!(x, |k| if vx[k] > T::zero() { T::one() } else { T::zero() });
            }
            Op::Sigmoid(x) => pointwise!(x, |k| out[k] * (T::one() - out[k])),
            Op::Softplus(x) => {
                let vx = val(x);
                pointwise!(x, |k| sigmoid(vx[k]));
            }
            Op::Abs(x) => {
                let vx = val(x);
                pointwise!(x, |k| if vx[k] > T::zero() {
                    T::one()
                } else if vx[k] < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                });
            }
            Op::Ln(x) => {
                let vx = val(x);
                pointwise!(x, |k| T::one() / vx[k]);
            }
            Op::Clamp { x, lo, hi } => {
                let vx = val(x);
                pointwise!(x, |k| if vx[k] >= *lo && vx[k] <= *hi {
                    T::one()
                } else {
                    T::zero()
                });
            }
            Op::LogSoftmax { x, axis } => {
                if needs(x) {
                    let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                    let acc = accumulate(&mut adj[x.0], out.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * n * inner + j * inner + i;
                            let gsum: T = (0..n).map(|j| g[at(j)]).sum();
                            for j in 0..n {
                                acc[at(j)] += g[at(j)] - out[at(j)].exp() * gsum;
                            }
                        }
                    }
                }
            }
            Op::Mean { x, axes } => {
                if needs(x) {
                    let shape = self.nodes[x.0].value.shape();
                    let (_, map) = reduction_map(shape, axes);
                    let count = T::from_usize(axes.iter().map(|&a| shape[a]).product()).unwrap();
                    let acc = accumulate(&mut adj[x.0], map.len());
                    for (a, &slot) in acc.iter_mut().zip(&map) {
                        *a += g[slot] / count;
                    }
                }
            }
            Op::Sum(x) => {
                if needs(x) {
                    let acc = accumulate(&mut adj[x.0], len(x));
                    acc.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Upsample2x(x) => {
                if needs(x) {
                    let (planes, h, w) = spatial_dims("upsample2x", self.nodes[x.0].value.shape())
                        .expect("validated in forward");
                    let acc = accumulate(&mut adj[x.0], planes * h * w);
                    let ow = 2 * w;
                    for p in 0..planes {
                        for r in 0..2 * h {
                            for c in 0..ow {
                                acc[p * h * w + (r / 2) * w + c / 2] += g[p * 4 * h * w + r * ow + c];
                            }
                        }
                    }
                }
            }
            Op::AvgPool2x2(x) => {
                if needs(x) {
                    let (planes, h, w) = spatial_dims("avg_pool2x2", self.nodes[x.0].value.shape())
                        .expect("validated in forward");
                    let quarter = T::lit(0.25);
                    let (oh, ow) = (h / 2, w / 2);
                    let acc = accumulate(&mut adj[x.0], planes * h * w);
                    for p in 0..planes {
                        for r in 0..h {
                            for c in 0..w {
                                acc[p * h * w + r * w + c] += g[p * oh * ow + (r / 2) * ow + c / 2] * quarter;
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => pointwise!(x, |k| T::one()),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = len(p);
                    if needs(p) {
                        let acc = accumulate(&mut adj[p.0], n);
                        for (a, &v) in acc.iter_mut().zip(&g[offset..offset + n]) {
                            *a += v;
                        }
                    }
                    offset += n;
                }
            }
            Op::MaskedSum { x, mask } => {
                if needs(x) {
                    let acc = accumulate(&mut adj[x.0], len(x));
                    for (a, _) in acc.iter_mut().zip(mask).filter(|(_, &m)| m) {
                        *a += g[0];
                    }
                }
            }
            Op::MaskedMean { x, mask, count } => {
                if needs(x) {
                    let share = g[0] / T::from_usize(*count).unwrap();
                    let acc = accumulate(&mut adj[x.0], len(x));
                    for (a, _) in acc.iter_mut().zip(mask).filter(|(_, &m)| m) {
                        *a += share;
                    }
                }
            }
            Op::Affine { x, w, b } => {
                let ws = self.nodes[w.0].value.shape();
                let (out_ch, in_ch) = (ws[0], ws[1]);
                let s = out.len() / out_ch;
                if needs(x) {
                    let acc = accumulate(&mut adj[x.0], in_ch * s);
                    // dx = w^T g
                    T::gemm(
                        in_ch,
                        out_ch,
                        s,
                        T::one(),
                        val(w),
                        1,
                        in_ch as isize,
                        g,
                        s as isize,
                        1,
                        T::one(),
                        acc,
                        s as isize,
                        1,
                    );
                }
                if needs(w) {
                    let acc = accumulate(&mut adj[w.0], out_ch * in_ch);
                    // dw = g x^T
                    T::gemm(
                        out_ch,
                        s,
                        in_ch,
                        T::one(),
                        g,
                        s as isize,
                        1,
                        val(x),
                        1,
                        s as isize,
                        T::one(),
                        acc,
                        in_ch as isize,
                        1,
                    );
                }
                if needs(b) {
                    let acc = accumulate(&mut adj[b.0], out_ch);
                    for (o, a) in acc.iter_mut().enumerate() {
                        *a += g[o * s..(o + 1) * s].iter().copied().sum::<T>();
                    }
                }
            }
        }
    }
}
