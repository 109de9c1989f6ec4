//! Dense tensors and the reverse-mode tape.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Nodes are
//! appended in execution order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! Gradient policy: `backward` *accumulates* into the grad slot of every leaf
//! created with `requires_grad = true`. Calling it twice without
//! [`Tape::zero_grad`] sums both passes. Leaves that the loss does not depend
//! on keep an all-zero gradient.

use std::fmt;

use crate::error::{Error, Result};
use crate::real::{gemm, MatRef, Real};

/// Dense row-major n-dimensional array. Image tensors use NCHW layout.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid_shape("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid_shape(
                "tensor",
                format!("shape {shape:?} holds {n} elements, data has {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self { shape, data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(Error::invalid_shape(op, format!("expected NCHW tensor, got {other:?}"))),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.f64())).collect() }
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub(crate) fn accumulate(&mut self, other: &[T]) {
        debug_assert_eq!(self.data.len(), other.len());
        for (a, &b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// `backward` receives the forward inputs, the forward output and the
/// upstream gradient, and returns one gradient per input (same shape as the
/// input). Entries whose `wants` flag is false may be `None`.
pub trait BackwardRule<T: Real>: Send {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        wants: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn BackwardRule<T>>>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Ordered record of a forward computation.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
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

    /// Records an input tensor. Leaves with `requires_grad` get a zeroed grad slot.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| Tensor::zeros(value.shape().to_vec()));
        self.nodes.push(Node { value, inputs: Vec::new(), rule: None, requires_grad, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Appends an operation node. Inputs must already be on this tape.
    pub fn push(&mut self, value: Tensor<T>, inputs: Vec<Var>, rule: impl BackwardRule<T> + 'static) -> Var {
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let rule: Option<Box<dyn BackwardRule<T>>> = if requires_grad { Some(Box::new(rule)) } else { None };
        self.nodes.push(Node { value, inputs, rule, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
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
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf grad slots.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NotScalar(loss_shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(Tensor::full(loss_shape.to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(upstream) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else {
                if let Some(slot) = self.nodes[i].grad.as_mut() {
                    slot.accumulate(upstream.data());
                }
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let wants: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let grads = rule.backward(&inputs, &node.value, &upstream, &wants);
            debug_assert_eq!(grads.len(), node.inputs.len(), "rule {}", rule.name());
            let input_ids: Vec<Var> = node.inputs.clone();
            for (var, g) in input_ids.into_iter().zip(grads) {
                let Some(g) = g else { continue };
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[var.0].value.shape());
                match pending[var.0].as_mut() {
                    Some(acc) => acc.accumulate(g.data()),
                    None => pending[var.0] = Some(g),
                }
            }
        }
        Ok(())
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Elementwise sum. `b` may have batch size 1 and is then broadcast over the batch.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = if sa == sb {
            false
        } else if sa.len() > 1 && sa.len() == sb.len() && sb[0] == 1 && sa[1..] == sb[1..] {
            true
        } else {
            return Err(Error::shape("add", sa, sb));
        };
        let av = self.value(a);
        let bv = self.value(b).data();
        let chunk = bv.len();
        let mut out = av.clone();
        for block in out.data_mut().chunks_mut(chunk) {
            for (o, &y) in block.iter_mut().zip(bv) {
                *o += y;
            }
        }
        Ok(self.push(out, vec![a, b], AddRule { broadcast }))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor { shape: av.shape().to_vec(), data };
        Ok(self.push(out, vec![a, b], MulRule))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, vec![a], ScaleRule(factor))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum_all());
        self.push(out, vec![a], SumRule)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, vec![a], ReshapeRule))
    }

    /// Per-pixel linear map across channels: `x[N,C,H,W]`, `w[C',C]`, `bias[C']`.
    pub fn matmul_1x1(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4("matmul_1x1")?;
        let ws = self.shape(w);
        if ws.len() != 2 || ws[1] != c {
            return Err(Error::shape("matmul_1x1", self.shape(x), ws));
        }
        let co = ws[0];
        if self.shape(bias) != [co] {
            return Err(Error::shape("matmul_1x1 bias", ws, self.shape(bias)));
        }
        let out = pointwise_forward(self.value(x).data(), self.value(w).data(), Some(self.value(bias).data()), n, c, co, h * wd);
        let out = Tensor { shape: vec![n, co, h, wd], data: out };
        Ok(self.push(out, vec![x, w, bias], PointwiseRule))
    }
}

/// `out[s] = W x[s] + b` for each sample `s`, with `x[s]` a `c x hw` matrix.
pub(crate) fn pointwise_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    n: usize,
    c: usize,
    co: usize,
    hw: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * co * hw];
    for s in 0..n {
        let o = &mut out[s * co * hw..(s + 1) * co * hw];
        if let Some(b) = bias {
            for (row, &bv) in o.chunks_mut(hw).zip(b) {
                row.iter_mut().for_each(|v| *v = bv);
            }
        }
        let xs = &x[s * c * hw..(s + 1) * c * hw];
        gemm(T::one(), MatRef::row_major(w, co, c), MatRef::row_major(xs, c, hw), T::one(), o);
    }
    out
}

/// Gradients of [`pointwise_forward`] w.r.t. `x`, `w` and `bias`.
pub(crate) fn pointwise_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    n: usize,
    c: usize,
    co: usize,
    hw: usize,
    wants: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let mut gx = wants[0].then(|| vec![T::zero(); n * c * hw]);
    let mut gw = wants[1].then(|| vec![T::zero(); co * c]);
    let mut gb = wants[2].then(|| vec![T::zero(); co]);
    for s in 0..n {
        let go = &gout[s * co * hw..(s + 1) * co * hw];
        let xs = &x[s * c * hw..(s + 1) * c * hw];
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[s * c * hw..(s + 1) * c * hw];
            gemm(T::one(), MatRef::transposed(w, co, c), MatRef::row_major(go, co, hw), T::zero(), gxs);
        }
        if let Some(gw) = gw.as_mut() {
            gemm(T::one(), MatRef::row_major(go, co, hw), MatRef::transposed(xs, c, hw), T::one(), gw);
        }
        if let Some(gb) = gb.as_mut() {
            for (g, row) in gb.iter_mut().zip(go.chunks(hw)) {
                *g += row.iter().copied().sum::<T>();
            }
        }
    }
    (gx, gw, gb)
}

struct AddRule {
    broadcast: bool,
}

impl<T: Real> BackwardRule<T> for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, wants: &[bool]) -> Vec<Option<Tensor<T>>> {
        let ga = wants[0].then(|| grad.clone());
        let gb = wants[1].then(|| {
            if self.broadcast {
                let mut acc = Tensor::zeros(inputs[1].shape().to_vec());
                for block in grad.data().chunks(acc.len()) {
                    acc.accumulate(block);
                }
                acc
            } else {
                grad.clone()
            }
        });
        vec![ga, gb]
    }
}

struct MulRule;

impl<T: Real> BackwardRule<T> for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, wants: &[bool]) -> Vec<Option<Tensor<T>>> {
        let prod = |other: &Tensor<T>| Tensor {
            shape: other.shape.clone(),
            data: grad.data().iter().zip(other.data()).map(|(&g, &o)| g * o).collect(),
        };
        vec![wants[0].then(|| prod(inputs[1])), wants[1].then(|| prod(inputs[0]))]
    }
}

struct ScaleRule<T>(T);

impl<T: Real> BackwardRule<T> for ScaleRule<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.map(|g| g * self.0))]
    }
}

struct SumRule;

impl<T: Real> BackwardRule<T> for SumRule {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(inputs[0].shape().to_vec(), grad.item()))]
    }
}

struct ReshapeRule;

impl<T: Real> BackwardRule<T> for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let g = Tensor { shape: inputs[0].shape().to_vec(), data: grad.data().to_vec() };
        vec![Some(g)]
    }
}

pub(crate) struct PointwiseRule;

impl<T: Real> BackwardRule<T> for PointwiseRule {
    fn name(&self) -> &'static str {
        "matmul_1x1"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, wants: &[bool]) -> Vec<Option<Tensor<T>>> {
        let [n, c, h, w] = inputs[0].dims4("matmul_1x1").expect("checked in forward");
        let co = output.shape()[1];
        let (gx, gw, gb) = pointwise_backward(
            inputs[0].data(),
            inputs[1].data(),
            grad.data(),
            n,
            c,
            co,
            h * w,
            [wants[0], wants[1], wants.get(2).copied().unwrap_or(false)],
        );
        let mut out = vec![
            gx.map(|d| Tensor { shape: inputs[0].shape().to_vec(), data: d }),
            gw.map(|d| Tensor { shape: inputs[1].shape().to_vec(), data: d }),
        ];
        if inputs.len() > 2 {
            out.push(gb.map(|d| Tensor { shape: inputs[2].shape().to_vec(), data: d }));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};

    #[test]
    fn add_values_and_identity() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let b = t.constant(Tensor::new([2], vec![3.0, 4.0]).unwrap());
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
        let z = t.constant(Tensor::zeros([2]));
        let d = t.add(a, z).unwrap();
        assert_eq!(t.value(d), t.value(a));
    }

    #[test]
    fn add_shape_mismatch_names_both_shapes() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(Tensor::zeros([2, 3]));
        let b = t.constant(Tensor::zeros([3, 2]));
        let msg = t.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn add_broadcasts_over_batch() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::from_fn([2, 1, 1, 2], |i| i as f64), true);
        let b = t.leaf(Tensor::new([1, 1, 1, 2], vec![10.0, 20.0]).unwrap(), true);
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[10.0, 21.0, 12.0, 23.0]);
        let s = t.sum(c);
        t.backward(s).unwrap();
        assert_eq!(t.grad(b).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(t.grad(a).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_fn([2, 2], |i| i as f64 - 1.5), true);
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_accumulates_until_zeroed() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
        let s = t.sum(x);
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 2.0]);
        t.zero_grad();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros([2]), true);
        assert!(matches!(t.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn disconnected_leaf_has_zero_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::ones([3]), true);
        let y = t.leaf(Tensor::ones([3]), true);
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(y).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn add_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let report = check_gradients::<f64>(
                &[vec![2, 3], vec![2, 3]],
                seed,
                GradCheck::f64(),
                |t, v| {
                    let c = t.add(v[0], v[1])?;
                    Ok(t.sum(c))
                },
            )
            .unwrap();
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn matmul_1x1_identity_and_arithmetic() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_fn([1, 2, 2, 2], |i| i as f64));
        let w = t.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = t.constant(Tensor::zeros([2]));
        let y = t.matmul_1x1(x, w, b).unwrap();
        assert_eq!(t.value(y), t.value(x));

        let x = t.constant(Tensor::new([1, 2, 1, 1], vec![3.0, 4.0]).unwrap());
        let w = t.constant(Tensor::new([1, 2], vec![1.0, 1.0]).unwrap());
        let b = t.constant(Tensor::zeros([1]));
        let y = t.matmul_1x1(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[7.0]);
    }

    #[test]
    fn matmul_1x1_channel_mismatch() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros([1, 3, 2, 2]));
        let w = t.constant(Tensor::zeros([2, 2]));
        let b = t.constant(Tensor::zeros([2]));
        assert!(t.matmul_1x1(x, w, b).is_err());
    }

    #[test]
    fn matmul_1x1_gradients_match_finite_differences() {
        for seed in 0..10 {
            let report = check_gradients::<f64>(
                &[vec![2, 3, 4, 4], vec![5, 3], vec![5]],
                seed,
                GradCheck::f64(),
                |t, v| {
                    let y = t.matmul_1x1(v[0], v[1], v[2])?;
                    Ok(y)
                },
            )
            .unwrap();
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn matmul_1x1_backward_is_transpose_map() {
        // <J g, u> == <g, J^T u> for the linear map x -> W x.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut rand_t = |shape: &[usize]| Tensor::<f64>::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0));
        let x = rand_t(&[2, 3, 3, 3]);
        let w = rand_t(&[4, 3]);
        let u = rand_t(&[2, 4, 3, 3]);
        let mut t = Tape::<f64>::new();
        let xv = t.leaf(x.clone(), true);
        let wv = t.constant(w.clone());
        let bv = t.constant(Tensor::zeros([4]));
        let y = t.matmul_1x1(xv, wv, bv).unwrap();
        let uv = t.constant(u.clone());
        let p = t.mul(y, uv).unwrap();
        let s = t.sum(p);
        t.backward(s).unwrap();
        let lhs: f64 = t.value(y).data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(t.grad(xv).unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }
}
