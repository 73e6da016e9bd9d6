//! Reverse-mode automatic differentiation over a recording tape.
//!
//! Every primitive appends one node holding its forward value. Nodes are
//! only ever appended, so the tape is in topological order by construction
//! and [`Tape::backward`] is a single reverse sweep that visits each node
//! once. Gradients accumulate additively across fan-out.
//!
//! ```
//! use busseg::autodiff::Tape;
//! use busseg::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum_all(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod broadcast;
pub mod conv;
mod pool;
mod resample;

pub use conv::{conv_output_shape, ConvSpec};

use crate::error::{Error, Result};
use crate::tensor::{split_extents, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Act(Activation),
    Exp,
    Log,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2x {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape {
        input: Var,
    },
    Unary {
        input: Var,
        kind: Unary,
    },
    Binary {
        a: Var,
        b: Var,
        kind: Binary,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Reduce {
        input: Var,
        start: usize,
        end: usize,
        kind: Reduce,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    LogSoftmax {
        input: Var,
        axis: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording graph for one forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    dropout_calls: u64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Tape::backward`]: one optional gradient per node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            dropout_calls: 0,
        }
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

    /// Returns the current dropout call counter and advances it.
    pub fn next_dropout_call(&mut self) -> u64 {
        let c = self.dropout_calls;
        self.dropout_calls += 1;
        c
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Learnable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-learnable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Cross-correlation of an NCHW input with a `K×C×F×F` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let g = conv::geometry(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let out = conv::forward(
            &g,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&conv::output_shape(&g), out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (value, argmax) = pool::forward(self.value(input), window, stride)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    /// Bilinear ×2 upsampling of H and W.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).nchw()?;
        let out = resample::forward(self.value(input).data(), n * c, h, w);
        let value = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Upsample2x { input }, rg))
    }

    /// Concatenates along the channel axis of NCHW tensors.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        for &v in inputs {
            self.value(v).nchw()?;
        }
        self.concat(inputs, 1)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Usage("concat of zero tensors".into()));
        };
        if inputs.len() == 1 {
            return Ok(first);
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Dimension(format!(
                    "cannot concatenate {s:?} with {base:?} along axis {axis}"
                )));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_extents(&base, axis, axis + 1);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "slice [{start}, {}) along axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let (outer, mid, inner) = split_extents(&shape, axis, axis + 1);
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(&new_shape, out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Slice { input, axis, start }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        self.unary(input, Unary::Act(kind))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Tanh)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn exp(&mut self, input: Var) -> Var {
        self.unary(input, Unary::Exp)
    }

    pub fn ln(&mut self, input: Var) -> Var {
        self.unary(input, Unary::Log)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, input: Var) -> Var {
        self.unary(input, Unary::Softplus)
    }

    fn unary(&mut self, input: Var, kind: Unary) -> Var {
        let value = self.value(input).map(|x| unary_forward(kind, x));
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Unary { input, kind }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape(), data)?
        } else {
            let shape = broadcast::broadcast_shape(ta.shape(), tb.shape())?;
            let pairs = broadcast::index_pairs(ta.shape(), tb.shape(), &shape);
            let (da, db) = (ta.data(), tb.data());
            let data = pairs.iter().map(|&(i, j)| f(da[i], db[j])).collect();
            Tensor::new(&shape, data)?
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Binary { a, b, kind }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|x| x * factor);
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Sums over the contiguous axis range `[start, end)`, keeping those axes as extent 1.
    pub fn sum_axes(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        self.reduce(input, start, end, Reduce::Sum)
    }

    pub fn mean_axes(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        self.reduce(input, start, end, Reduce::Mean)
    }

    /// Maximum over `[start, end)`; the gradient goes to the first maximiser.
    pub fn max_axes(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        self.reduce(input, start, end, Reduce::Max)
    }

    /// Sum of all elements as a shape-`[1]` tensor.
    pub fn sum_all(&mut self, input: Var) -> Var {
        let rank = self.shape(input).len();
        let s = self.reduce(input, 0, rank, Reduce::Sum).expect("full-range reduce");
        self.reshape(s, &[1]).expect("one element")
    }

    pub fn mean_all(&mut self, input: Var) -> Var {
        let rank = self.shape(input).len();
        let s = self.reduce(input, 0, rank, Reduce::Mean).expect("full-range reduce");
        self.reshape(s, &[1]).expect("one element")
    }

    fn reduce(&mut self, input: Var, start: usize, end: usize, kind: Reduce) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if start >= end || end > shape.len() {
            return Err(Error::Dimension(format!(
                "reduce axes [{start}, {end}) invalid for shape {shape:?}"
            )));
        }
        let (outer, mid, inner) = split_extents(&shape, start, end);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::new();
        let inv = T::one() / T::lit(mid as f64);
        for o in 0..outer {
            for i in 0..inner {
                let at = |m: usize| (o * mid + m) * inner + i;
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let s: T = (0..mid).map(|m| x[at(m)]).sum();
                        out.push(if kind == Reduce::Mean { s * inv } else { s });
                    }
                    Reduce::Max => {
                        let mut best = at(0);
                        for m in 1..mid {
                            if x[at(m)] > x[best] {
                                best = at(m);
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let mut new_shape = shape;
        new_shape[start..end].fill(1);
        let value = Tensor::new(&new_shape, out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            value,
            Op::Reduce {
                input,
                start,
                end,
                kind,
                argmax,
            },
            rg,
        ))
    }

    /// Batched affine map: `x` is `N×n`, `weight` is `m×n`, `bias` has length
    /// `m`; returns `N×m` with rows `W·x_r + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(weight));
        let (&[n, k], &[m, k2]) = (tx.shape(), tw.shape()) else {
            return Err(Error::Dimension(format!(
                "linear expects N×n input and m×n weight, got {:?} and {:?}",
                tx.shape(),
                tw.shape()
            )));
        };
        if k != k2 {
            return Err(Error::Dimension(format!(
                "linear: input {:?} incompatible with weight {:?}",
                tx.shape(),
                tw.shape()
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(Error::Dimension(format!(
                    "linear: bias {:?} must have length {m}",
                    self.shape(b)
                )));
            }
        }
        let (xd, wd) = (tx.data(), tw.data());
        let mut out = Vec::with_capacity(n * m);
        for r in 0..n {
            let row = &xd[r * k..(r + 1) * k];
            for o in 0..m {
                let wrow = &wd[o * k..(o + 1) * k];
                let mut acc: T = row.iter().zip(wrow).map(|(&a, &b)| a * b).sum();
                if let Some(b) = bias {
                    acc = acc + self.value(b).data()[o];
                }
                out.push(acc);
            }
        }
        let value = Tensor::new(&[n, m], out)?;
        let mut deps = vec![x, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(value, Op::Linear { x, weight, bias }, rg))
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, mid, inner) = split_extents(&shape, axis, axis + 1);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |m: usize| (o * mid + m) * inner + i;
                let mx = (0..mid).map(|m| x[at(m)]).fold(T::neg_infinity(), T::max);
                let lse = (0..mid).map(|m| (x[at(m)] - mx).exp()).sum::<T>().ln() + mx;
                for m in 0..mid {
                    out[at(m)] = x[at(m)] - lse;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::LogSoftmax { input, axis }, rg))
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let go = g.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let (ti, tk) = (self.value(input), self.value(kernel));
                let geo = conv::geometry(ti, tk, bias.map(|b| self.value(b)), stride, pad)?;
                if self.requires_grad(input) {
                    let gi = conv::backward_input(&geo, tk.data(), go);
                    self.accumulate(grads, input, Tensor::new(ti.shape(), gi)?);
                }
                if self.requires_grad(kernel) {
                    let gk = conv::backward_kernel(&geo, ti.data(), go);
                    self.accumulate(grads, kernel, Tensor::new(tk.shape(), gk)?);
                }
                if let Some(b) = bias.filter(|&b| self.requires_grad(b)) {
                    let gb = conv::backward_bias(&geo, go);
                    self.accumulate(grads, b, Tensor::new(self.shape(b), gb)?);
                }
            }
            Op::MaxPool { input, argmax } => {
                let ti = self.value(*input);
                let gi = pool::backward(ti.numel(), argmax, go);
                self.accumulate(grads, *input, Tensor::new(ti.shape(), gi)?);
            }
            &Op::Upsample2x { input } => {
                let ti = self.value(input);
                let [n, c, h, w] = ti.nchw()?;
                let gi = resample::backward(go, n * c, h, w);
                self.accumulate(grads, input, Tensor::new(ti.shape(), gi)?);
            }
            Op::Concat { inputs, axis } => {
                let shape = g.shape();
                let (outer, mid, inner) = split_extents(shape, *axis, axis + 1);
                let mut offset = 0;
                for &v in inputs {
                    let ext = self.shape(v)[*axis];
                    if self.requires_grad(v) {
                        let mut part = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let base = (o * mid + offset) * inner;
                            part.extend_from_slice(&go[base..base + ext * inner]);
                        }
                        self.accumulate(grads, v, Tensor::new(self.shape(v), part)?);
                    }
                    offset += ext;
                }
            }
            &Op::Slice { input, axis, start } => {
                let shape = self.shape(input);
                let (outer, mid, inner) = split_extents(shape, axis, axis + 1);
                let len = g.shape()[axis];
                let mut gi = vec![T::zero(); outer * mid * inner];
                for o in 0..outer {
                    let base = (o * mid + start) * inner;
                    gi[base..base + len * inner]
                        .copy_from_slice(&go[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, input, Tensor::new(shape, gi)?);
            }
            &Op::Reshape { input } => {
                self.accumulate(grads, input, g.reshape(self.shape(input))?);
            }
            &Op::Unary { input, kind } => {
                let x = self.value(input).data();
                let y = node.value.data();
                let gi = go
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&g, (&x, &y))| g * unary_derivative(kind, x, y))
                    .collect();
                self.accumulate(grads, input, Tensor::new(self.shape(input), gi)?);
            }
            &Op::Binary { a, b, kind } => self.binary_backward(a, b, kind, g, grads)?,
            &Op::Scale { input, factor } => {
                self.accumulate(grads, input, g.map(|x| x * factor));
            }
            Op::Reduce {
                input,
                start,
                end,
                kind,
                argmax,
            } => {
                let shape = self.shape(*input);
                let (outer, mid, inner) = split_extents(shape, *start, *end);
                let mut gi = vec![T::zero(); outer * mid * inner];
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let scale = if *kind == Reduce::Mean {
                            T::one() / T::lit(mid as f64)
                        } else {
                            T::one()
                        };
                        for o in 0..outer {
                            for m in 0..mid {
                                for i in 0..inner {
                                    gi[(o * mid + m) * inner + i] = go[o * inner + i] * scale;
                                }
                            }
                        }
                    }
                    Reduce::Max => {
                        for (&src, &gv) in argmax.iter().zip(go) {
                            gi[src] = gi[src] + gv;
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(shape, gi)?);
            }
            &Op::Linear { x, weight, bias } => {
                let (tx, tw) = (self.value(x), self.value(weight));
                let (n, k) = (tx.shape()[0], tx.shape()[1]);
                let m = tw.shape()[0];
                if self.requires_grad(x) {
                    let mut gx = vec![T::zero(); n * k];
                    for r in 0..n {
                        for o in 0..m {
                            let gv = go[r * m + o];
                            for c in 0..k {
                                gx[r * k + c] = gx[r * k + c] + gv * tw.data()[o * k + c];
                            }
                        }
                    }
                    self.accumulate(grads, x, Tensor::new(tx.shape(), gx)?);
                }
                if self.requires_grad(weight) {
                    let mut gw = vec![T::zero(); m * k];
                    for r in 0..n {
                        for o in 0..m {
                            let gv = go[r * m + o];
                            for c in 0..k {
                                gw[o * k + c] = gw[o * k + c] + gv * tx.data()[r * k + c];
                            }
                        }
                    }
                    self.accumulate(grads, weight, Tensor::new(tw.shape(), gw)?);
                }
                if let Some(b) = bias.filter(|&b| self.requires_grad(b)) {
                    let gb = (0..m).map(|o| (0..n).map(|r| go[r * m + o]).sum()).collect();
                    self.accumulate(grads, b, Tensor::new(&[m], gb)?);
                }
            }
            &Op::LogSoftmax { input, axis } => {
                let shape = self.shape(input);
                let (outer, mid, inner) = split_extents(shape, axis, axis + 1);
                let y = node.value.data();
                let mut gi = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |m: usize| (o * mid + m) * inner + i;
                        let total: T = (0..mid).map(|m| go[at(m)]).sum();
                        for m in 0..mid {
                            gi[at(m)] = go[at(m)] - y[at(m)].exp() * total;
                        }
                    }
                }
                self.accumulate(grads, input, Tensor::new(shape, gi)?);
            }
        }
        Ok(())
    }

    fn binary_backward(
        &self,
        a: Var,
        b: Var,
        kind: Binary,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (da, db, go) = (ta.data(), tb.data(), g.data());
        let local = |x: T, y: T| -> (T, T) {
            match kind {
                Binary::Add => (T::one(), T::one()),
                Binary::Sub => (T::one(), -T::one()),
                Binary::Mul => (y, x),
                Binary::Div => (T::one() / y, -x / (y * y)),
            }
        };
        let mut ga = vec![T::zero(); da.len()];
        let mut gb = vec![T::zero(); db.len()];
        if ta.shape() == tb.shape() {
            for i in 0..go.len() {
                let (la, lb) = local(da[i], db[i]);
                ga[i] = go[i] * la;
                gb[i] = go[i] * lb;
            }
        } else {
            let pairs = broadcast::index_pairs(ta.shape(), tb.shape(), g.shape());
            for (&(i, j), &gv) in pairs.iter().zip(go) {
                let (la, lb) = local(da[i], db[j]);
                ga[i] = ga[i] + gv * la;
                gb[j] = gb[j] + gv * lb;
            }
        }
        self.accumulate(grads, a, Tensor::new(ta.shape(), ga)?);
        self.accumulate(grads, b, Tensor::new(tb.shape(), gb)?);
        Ok(())
    }
}

fn unary_forward<T: Real>(kind: Unary, x: T) -> T {
    match kind {
        Unary::Act(Activation::Sigmoid) => sigmoid(x),
        Unary::Act(Activation::Tanh) => x.tanh(),
        Unary::Act(Activation::Relu) => x.max(T::zero()),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Softplus => softplus(x),
    }
}

fn unary_derivative<T: Real>(kind: Unary, x: T, y: T) -> T {
    match kind {
        Unary::Act(Activation::Sigmoid) => y * (T::one() - y),
        Unary::Act(Activation::Tanh) => T::one() - y * y,
        Unary::Act(Activation::Relu) => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::Exp => y,
        Unary::Log => T::one() / x,
        Unary::Softplus => sigmoid(x),
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
