use std::borrow::Cow;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use super::NumericsError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_raw(i: usize) -> Self {
        Self(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Relu,
    Tanh,
    Exp,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Relu,
    Tanh,
    Exp,
    Log,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Unary(Unary, Var),
    LogClamped { x: Var, floor: f64 },
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Reduce { kind: ReduceOp, x: Var, axis: usize, argmax: Vec<usize> },
    SumAll(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Softmax { x: Var, axis: usize },
    GatherRows { x: Var, index: Vec<usize> },
    ScatterRows { x: Var, index: Vec<usize> },
    BroadcastRows(Var),
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    op: Op,
    needs_grad: bool,
}

/// Computation tape for reverse-mode differentiation.
///
/// Operations are appended in execution order, so the node list is already
/// topologically sorted. Parameters are borrowed from a [`ParamStore`] rather
/// than copied; their gradients are read back with [`Tape::param_grads`].
pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
    params: Option<&'p ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
    track: bool,
    grads: Option<Vec<Option<Vec<T>>>>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Real> Tape<'p, T> {
    /// Tape that tracks gradients for parameters loaded from `params`.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self::build(Some(params), true)
    }

    /// Tape whose parameters never require gradients.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self::build(Some(params), false)
    }

    /// Tape without a parameter store; only explicit leaves participate.
    pub fn detached() -> Self {
        Self::build(None, true)
    }

    fn build(params: Option<&'p ParamStore<T>>, track: bool) -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: vec![None; params.map_or(0, ParamStore::len)],
            params,
            track,
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_tracking(&self) -> bool {
        self.track
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn values(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.values(v)[0]
    }

    /// Snapshot of a recorded value, with its gradient attached when one exists.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let mut t = self.value(v).clone().with_requires_grad(self.nodes[v.0].needs_grad);
        t.clear_grad();
        if let Some(g) = self.grad(v) {
            t.set_grad(g.to_vec()).expect("grad shape");
        }
        t
    }

    /// Record a leaf. The tensor's `requires_grad` flag decides whether it receives a gradient.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(Cow::Owned(tensor), Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Constant borrowed for the tape's lifetime instead of copied.
    pub fn borrowed(&mut self, tensor: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(tensor), Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Load a parameter. Repeated loads on the same tape return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let var = self.push(Cow::Borrowed(store.get(id)), Op::Param, self.track);
        self.param_vars[id.index()] = Some(var);
        var
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, tensor: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(tensor), op, needs_grad)
    }

    fn make(shape: Vec<usize>, values: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, values).expect("internal shape invariant")
    }

    // ---- elementwise ----------------------------------------------------

    pub fn elementwise(&mut self, op: ElementwiseOp, inputs: &[Var]) -> Result<Var, NumericsError> {
        let arity = match op {
            ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(NumericsError::Arity {
                expected: arity,
                got: inputs.len(),
            });
        }
        match op {
            ElementwiseOp::Add => self.add(inputs[0], inputs[1]),
            ElementwiseOp::Sub => self.sub(inputs[0], inputs[1]),
            ElementwiseOp::Mul => self.mul(inputs[0], inputs[1]),
            ElementwiseOp::Sigmoid => Ok(self.sigmoid(inputs[0])),
            ElementwiseOp::Relu => Ok(self.relu(inputs[0])),
            ElementwiseOp::Tanh => Ok(self.tanh(inputs[0])),
            ElementwiseOp::Exp => Ok(self.exp(inputs[0])),
            ElementwiseOp::Log => Ok(self.log(inputs[0])),
        }
    }

    /// Output shape for a binary op: equal shapes, or one side holding a single element.
    fn broadcast_shape(&self, a: Var, b: Var) -> Result<Vec<usize>, NumericsError> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() {
            Ok(sa.shape().to_vec())
        } else if sb.numel() == 1 {
            Ok(sa.shape().to_vec())
        } else if sa.numel() == 1 {
            Ok(sb.shape().to_vec())
        } else {
            Err(NumericsError::ShapeMismatch {
                op: "elementwise",
                left: sa.shape().to_vec(),
                right: sb.shape().to_vec(),
            })
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op) -> Result<Var, NumericsError> {
        let shape = self.broadcast_shape(a, b)?;
        let (va, vb) = (self.values(a), self.values(b));
        let n: usize = shape.iter().product();
        let pick = |v: &[T], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let out = (0..n).map(|i| f(pick(va, i), pick(vb, i))).collect();
        Ok(self.record(Self::make(shape, out), op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; on ties the gradient goes to the left operand.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, |x, y| if x <= y { x } else { y }, Op::Minimum(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let c = self.constant_scalar(factor);
        self.mul(x, c).expect("scalar broadcast")
    }

    /// `c - x` for a constant `c`.
    pub fn rsub_scalar(&mut self, c: T, x: Var) -> Var {
        let c = self.constant_scalar(c);
        self.sub(c, x).expect("scalar broadcast")
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let f: fn(T) -> T = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Relu => |v: T| if v > T::zero() { v } else { T::zero() },
            Unary::Tanh => |v: T| v.tanh(),
            Unary::Exp => |v: T| v.exp(),
            Unary::Log => |v: T| v.ln(),
        };
        let t = self.value(x);
        let out = t.values().iter().map(|&v| f(v)).collect();
        let tensor = Self::make(t.shape().to_vec(), out);
        self.record(tensor, Op::Unary(kind, x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    /// `max(ln x, floor)`, with zero gradient where the floor is active.
    /// Non-positive inputs map to the floor.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        let floor_t = T::from_f64_lossy(floor);
        let t = self.value(x);
        let out = t
            .values()
            .iter()
            .map(|&v| {
                if v > T::zero() && v.ln() > floor_t {
                    v.ln()
                } else {
                    floor_t
                }
            })
            .collect();
        let tensor = Self::make(t.shape().to_vec(), out);
        self.record(tensor, Op::LogClamped { x, floor }, &[x])
    }

    /// Inverted dropout. Identity when `training` is off or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::InvalidRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let shape = self.shape(x).to_vec();
        let n = self.value(x).numel();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mask = self.constant(Self::make(shape, mask));
        self.mul(x, mask)
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.values(), tb.values(), m, k, n);
        Ok(self.record(Self::make(vec![m, n], out), Op::Matmul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(NumericsError::NotAMatrix(t.shape().to_vec()));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let out = transpose_raw(t.values(), r, c);
        Ok(self.record(Self::make(vec![c, r], out), Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.record(t, Op::Reshape(x), &[x]))
    }

    // ---- reductions -----------------------------------------------------

    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: usize) -> Result<Var, NumericsError> {
        if op == ReduceOp::Max {
            return self.max_with_argmax(x, axis).map(|(v, _)| v);
        }
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::InvalidAxis { axis, ndim: shape.len() });
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let vals = t.values();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + vals[(o * mid + m) * inner + i];
                }
            }
        }
        if op == ReduceOp::Mean {
            let n = T::from_usize(mid).expect("axis length");
            out.iter_mut().for_each(|v| *v = *v / n);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let tensor = Self::make(out_shape, out);
        Ok(self.record(
            tensor,
            Op::Reduce {
                kind: op,
                x,
                axis,
                argmax: Vec::new(),
            },
            &[x],
        ))
    }

    /// Maximum along `axis` together with the winning index for every output element.
    /// Ties resolve to the lowest index.
    pub fn max_with_argmax(&mut self, x: Var, axis: usize) -> Result<(Var, Vec<usize>), NumericsError> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::InvalidAxis { axis, ndim: shape.len() });
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let vals = t.values();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for m in 1..mid {
                    if vals[(o * mid + m) * inner + i] > vals[(o * mid + best) * inner + i] {
                        best = m;
                    }
                }
                argmax.push(best);
                out.push(vals[(o * mid + best) * inner + i]);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let tensor = Self::make(out_shape, out);
        let var = self.record(
            tensor,
            Op::Reduce {
                kind: ReduceOp::Max,
                x,
                axis,
                argmax: argmax.clone(),
            },
            &[x],
        );
        Ok((var, argmax))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.values(x).iter().copied().sum();
        self.record(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    // ---- structural -----------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let first = inputs.first().ok_or(NumericsError::EmptyInput("concat"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(NumericsError::InvalidAxis { axis, ndim: base.len() });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let mid = t.shape()[axis];
                out.extend_from_slice(&t.values()[o * mid * inner..(o + 1) * mid * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let tensor = Self::make(shape, out);
        Ok(self.record(
            tensor,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::InvalidAxis { axis, ndim: shape.len() });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(NumericsError::OutOfRange {
                index: start + len,
                bound: shape[axis],
            });
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let vals = self.values(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * mid + start) * inner;
            out.extend_from_slice(&vals[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let tensor = Self::make(out_shape, out);
        Ok(self.record(tensor, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::InvalidAxis { axis, ndim: shape.len() });
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let vals = t.values();
        let mut out = vec![T::zero(); vals.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |m: usize| (o * mid + m) * inner + i;
                let max = (0..mid).map(|m| vals[idx(m)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for m in 0..mid {
                    let e = (vals[idx(m)] - max).exp();
                    out[idx(m)] = e;
                    total = total + e;
                }
                for m in 0..mid {
                    out[idx(m)] = out[idx(m)] / total;
                }
            }
        }
        let tensor = Self::make(shape, out);
        Ok(self.record(tensor, Op::Softmax { x, axis }, &[x]))
    }

    /// Select rows (first-axis slices) by index; a vector yields single elements.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if index.is_empty() {
            return Err(NumericsError::EmptyInput("gather_rows"));
        }
        let rows = t.rows();
        let width = t.row_width();
        let mut out = Vec::with_capacity(index.len() * width);
        for &r in index {
            if r >= rows {
                return Err(NumericsError::OutOfRange { index: r, bound: rows });
            }
            out.extend_from_slice(&t.values()[r * width..(r + 1) * width]);
        }
        let mut shape = t.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = index.len();
        let tensor = Self::make(shape, out);
        Ok(self.record(
            tensor,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Add row `k` of `x` into row `index[k]` of a zero tensor with `rows` rows.
    pub fn scatter_rows(&mut self, x: Var, index: &[usize], rows: usize) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.rows() != index.len() {
            return Err(NumericsError::LengthMismatch {
                shape: t.shape().to_vec(),
                len: index.len(),
            });
        }
        let width = t.row_width();
        let mut out = vec![T::zero(); rows * width];
        for (k, &r) in index.iter().enumerate() {
            if r >= rows {
                return Err(NumericsError::OutOfRange { index: r, bound: rows });
            }
            for c in 0..width {
                out[r * width + c] = out[r * width + c] + t.values()[k * width + c];
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows;
        let tensor = Self::make(shape, out);
        Ok(self.record(
            tensor,
            Op::ScatterRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Stack `rows` copies of `x` along a new leading axis.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Var {
        let t = self.value(x);
        let mut out = Vec::with_capacity(rows * t.numel());
        for _ in 0..rows {
            out.extend_from_slice(t.values());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(t.shape());
        let tensor = Self::make(shape, out);
        self.record(tensor, Op::BroadcastRows(x), &[x])
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar. A second call requires [`Tape::reset_grads`] first.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.nodes.is_empty() {
            return Err(NumericsError::EmptyTape);
        }
        if self.grads.is_some() {
            return Err(NumericsError::BackwardTwice);
        }
        let loss_t = self.value(loss);
        if loss_t.numel() != 1 {
            return Err(NumericsError::NonScalarLoss(loss_t.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Nodes the loss depends on get an explicit zero gradient even when every
        // path to them was cut (e.g. by relu).
        let mut live = vec![false; self.nodes.len()];
        live[loss.0] = true;
        for idx in (0..=loss.0).rev() {
            if live[idx] {
                for v in self.inputs(idx) {
                    live[v.0] = true;
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.needs_grad || !live[idx] {
                grads[idx] = None;
            } else if grads[idx].is_none() {
                grads[idx] = Some(vec![T::zero(); node.value.numel()]);
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn inputs(&self, idx: usize) -> Vec<Var> {
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Minimum(a, b) | Op::Matmul(a, b) => {
                vec![*a, *b]
            }
            Op::Unary(_, x)
            | Op::LogClamped { x, .. }
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Reduce { x, .. }
            | Op::SumAll(x)
            | Op::Narrow { x, .. }
            | Op::Softmax { x, .. }
            | Op::GatherRows { x, .. }
            | Op::ScatterRows { x, .. }
            | Op::BroadcastRows(x) => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }

    /// Allow another backward pass on the same tape.
    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// Gradients of every parameter loaded on this tape that received one.
    pub fn param_grads(&self) -> Vec<(ParamId, &[T])> {
        self.param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                Some((ParamId::new(i), self.grad(v)?))
            })
            .collect()
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.values();
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                acc(*a, &mut |s| broadcast_back(s, g, |x| x));
                acc(*b, &mut |s| broadcast_back(s, g, |x| x * sign));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.values(*a), self.values(*b));
                let pick = |v: &[T], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                if needs(a) {
                    let ga: Vec<T> = g.iter().enumerate().map(|(i, &gi)| gi * pick(vb, i)).collect();
                    acc(*a, &mut |s| broadcast_back(s, &ga, |x| x));
                }
                if needs(b) {
                    let gb: Vec<T> = g.iter().enumerate().map(|(i, &gi)| gi * pick(va, i)).collect();
                    acc(*b, &mut |s| broadcast_back(s, &gb, |x| x));
                }
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.values(*a), self.values(*b));
                let pick = |v: &[T], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                let left: Vec<bool> = (0..g.len()).map(|i| pick(va, i) <= pick(vb, i)).collect();
                let ga: Vec<T> = g.iter().zip(&left).map(|(&gi, &l)| if l { gi } else { T::zero() }).collect();
                let gb: Vec<T> = g.iter().zip(&left).map(|(&gi, &l)| if l { T::zero() } else { gi }).collect();
                acc(*a, &mut |s| broadcast_back(s, &ga, |x| x));
                acc(*b, &mut |s| broadcast_back(s, &gb, |x| x));
            }
            Op::Unary(kind, x) => {
                let xv = self.values(*x);
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        let d = match kind {
                            Unary::Sigmoid => out[i] * (T::one() - out[i]),
                            Unary::Relu => {
                                if xv[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Tanh => T::one() - out[i] * out[i],
                            Unary::Exp => out[i],
                            Unary::Log => T::one() / xv[i],
                        };
                        s[i] = s[i] + g[i] * d;
                    }
                });
            }
            Op::LogClamped { x, floor } => {
                let xv = self.values(*x);
                let floor = T::from_f64_lossy(*floor);
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        if xv[i] > T::zero() && xv[i].ln() > floor {
                            s[i] = s[i] + g[i] / xv[i];
                        }
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if needs(a) {
                    let bt = transpose_raw(tb.values(), k, n);
                    let ga = matmul_raw(g, &bt, m, n, k);
                    acc(*a, &mut |s| add_assign(s, &ga));
                }
                if needs(b) {
                    let at = transpose_raw(ta.values(), m, k);
                    let gb = matmul_raw(&at, g, k, m, n);
                    acc(*b, &mut |s| add_assign(s, &gb));
                }
            }
            Op::Transpose(x) => {
                let shape = self.shape(*x);
                let (r, c) = (shape[0], shape[1]);
                let gt = transpose_raw(g, c, r);
                acc(*x, &mut |s| add_assign(s, &gt));
            }
            Op::Reshape(x) => acc(*x, &mut |s| add_assign(s, g)),
            Op::Reduce { kind, x, axis, argmax } => {
                let shape = self.shape(*x).to_vec();
                let (outer, mid, inner) = split_axis(&shape, *axis);
                let scale = match kind {
                    ReduceOp::Mean => T::one() / T::from_usize(mid).expect("axis length"),
                    _ => T::one(),
                };
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let gi = g[o * inner + i];
                            match kind {
                                ReduceOp::Max => {
                                    let m = argmax[o * inner + i];
                                    let j = (o * mid + m) * inner + i;
                                    s[j] = s[j] + gi;
                                }
                                _ => {
                                    for m in 0..mid {
                                        let j = (o * mid + m) * inner + i;
                                        s[j] = s[j] + gi * scale;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => acc(*x, &mut |s| s.iter_mut().for_each(|v| *v = *v + g[0])),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape().to_vec();
                let (outer, total, inner) = split_axis(&shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let mid = self.shape(v)[*axis];
                    acc(v, &mut |s| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * mid * inner;
                            for j in 0..mid * inner {
                                s[dst + j] = s[dst + j] + g[src + j];
                            }
                        }
                    });
                    offset += mid;
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x).to_vec();
                let (outer, mid, inner) = split_axis(&shape, *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        let dst = (o * mid + start) * inner;
                        let src = o * len * inner;
                        for j in 0..len * inner {
                            s[dst + j] = s[dst + j] + g[src + j];
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let shape = node.value.shape().to_vec();
                let (outer, mid, inner) = split_axis(&shape, *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |m: usize| (o * mid + m) * inner + i;
                            let dot: T = (0..mid).map(|m| g[idx(m)] * out[idx(m)]).sum();
                            for m in 0..mid {
                                s[idx(m)] = s[idx(m)] + out[idx(m)] * (g[idx(m)] - dot);
                            }
                        }
                    }
                });
            }
            Op::GatherRows { x, index } => {
                let width = node.value.row_width();
                acc(*x, &mut |s| {
                    for (k, &r) in index.iter().enumerate() {
                        for c in 0..width {
                            s[r * width + c] = s[r * width + c] + g[k * width + c];
                        }
                    }
                });
            }
            Op::ScatterRows { x, index } => {
                let width = node.value.row_width();
                acc(*x, &mut |s| {
                    for (k, &r) in index.iter().enumerate() {
                        for c in 0..width {
                            s[k * width + c] = s[k * width + c] + g[r * width + c];
                        }
                    }
                });
            }
            Op::BroadcastRows(x) => {
                let width = self.value(*x).numel();
                acc(*x, &mut |s| {
                    for chunk in g.chunks(width) {
                        add_assign(s, chunk);
                    }
                });
            }
        }
    }
}

fn add_assign<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Accumulate `g` into `dst`, summing when `dst` is a broadcast scalar.
fn broadcast_back<T: Real>(dst: &mut [T], g: &[T], f: impl Fn(T) -> T) {
    if dst.len() == g.len() {
        for (d, &v) in dst.iter_mut().zip(g) {
            *d = *d + f(v);
        }
    } else {
        let total: T = g.iter().copied().sum();
        dst[0] = dst[0] + f(total);
    }
}

pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Real>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
