//! Wengert-list reverse mode: every primitive executes eagerly and records
//! just enough to compute its vector-Jacobian product later.

use rand::Rng;

use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::{dot, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geo: ConvGeometry },
    Linear { input: Var, weight: Var, bias: Var },
    LeakyRelu { input: Var, slope: f64 },
    Dropout { input: Var, scale: Vec<f64> },
    Add(Var, Var),
    Sub(Var, Var),
    Affine { input: Var, scale: f64 },
    Sigmoid(Var),
    Ln(Var),
    Clamp { input: Var, lo: f64, hi: f64 },
    SumSquares(Var),
    Sum(Var),
    Reshape(Var),
    Concat { a: Var, b: Var, axis: usize },
    Stack(Vec<Var>),
    Select { input: Var, index: usize },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias, .. } | Op::Linear { input, weight: kernel, bias } => {
                vec![*input, *kernel, *bias]
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Concat { a, b, .. } => vec![*a, *b],
            Op::Stack(frames) => frames.clone(),
            Op::LeakyRelu { input, .. }
            | Op::Dropout { input, .. }
            | Op::Affine { input, .. }
            | Op::Clamp { input, .. }
            | Op::Select { input, .. }
            | Op::Sigmoid(input)
            | Op::Ln(input)
            | Op::SumSquares(input)
            | Op::Sum(input)
            | Op::Reshape(input) => vec![*input],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Single-owner record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` does not influence
    /// the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Node indices in the order their VJPs ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Hash of the branch taken by every element of every piecewise node
    /// (leaky ReLU sign, clamp side). Two passes with the same signature lie
    /// on the same smooth piece of the recorded function.
    pub fn regime(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { input, .. } => {
                    for &v in self.nodes[input.0].value.data() {
                        mix(u64::from(v >= 0.0));
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    for &v in self.nodes[input.0].value.data() {
                        mix(if v < *lo {
                            2
                        } else if v > *hi {
                            3
                        } else {
                            4
                        });
                    }
                }
                _ => {}
            }
        }
        h
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is requested.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a fixed input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geo = ConvGeometry::new(x.shape(), k.shape(), stride, padding)?;
        if b.shape() != [geo.out_channels] {
            return Err(Error::shape(format!("conv2d bias must be [{}], got {:?}", geo.out_channels, b.shape())));
        }
        let out = conv2d_forward(&geo, x.data(), k.data(), b.data());
        let value = Tensor::new(geo.output_shape().to_vec(), out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geo }))
    }

    /// Row-wise affine map `x W^T + b` with `W: [Dout, Din]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[n, din], &[dout, win]) = (x.shape(), w.shape()) else {
            return Err(Error::shape(format!(
                "linear expects [N,Din] input and [Dout,Din] weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        };
        if din != win || b.shape() != [dout] {
            return Err(Error::shape(format!(
                "linear: input {:?}, weight {:?}, bias {:?} disagree",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let mut out = vec![0.0; n * dout];
        for r in 0..n {
            let row = &x.data()[r * din..(r + 1) * din];
            for o in 0..dout {
                let wrow = &w.data()[o * din..(o + 1) * din];
                out[r * dout + o] = b.data()[o] + dot(row, wrow);
            }
        }
        let value = Tensor::new(vec![n, dout], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Invalid(format!("leaky ReLU slope must lie in (0,1), got {slope}")));
        }
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::LeakyRelu { input, slope }))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` so that eval mode
    /// is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Invalid(format!("dropout probability must lie in [0,1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - p);
        let x = self.value(input);
        let scale: Vec<f64> = (0..x.numel()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let data = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { input, scale }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "add")?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "sub")?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("shape unchanged");
        self.push(value, Op::Affine { input, scale })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("shape unchanged");
        self.push(value, Op::Sigmoid(input))
    }

    pub fn ln(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if let Some(v) = x.data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonFinite(format!("log of non-positive value {v}")));
        }
        let data = x.data().iter().map(|v| v.ln()).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Ln(input)))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("shape unchanged");
        self.push(value, Op::Clamp { input, lo, hi })
    }

    pub fn sum_squares(&mut self, input: Var) -> Var {
        let s = self.value(input).sum_squares();
        self.push(Tensor::scalar(s), Op::SumSquares(input))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).numel() as f64;
        let s = self.sum(input);
        self.affine(s, 1.0 / n, 0.0)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(input)))
    }

    /// Concatenate two tensors of equal rank along `axis`.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (xs, ys) = (x.shape(), y.shape());
        let compatible = xs.len() == ys.len()
            && axis < xs.len()
            && xs.iter().zip(ys).enumerate().all(|(i, (p, q))| i == axis || p == q);
        if !compatible {
            return Err(Error::shape(format!("cannot concat {xs:?} and {ys:?} on axis {axis}")));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let (xa, ya) = (xs[axis] * inner, ys[axis] * inner);
        let mut data = Vec::with_capacity(x.numel() + y.numel());
        for o in 0..outer {
            data.extend_from_slice(&x.data()[o * xa..(o + 1) * xa]);
            data.extend_from_slice(&y.data()[o * ya..(o + 1) * ya]);
        }
        let mut shape = xs.to_vec();
        shape[axis] += ys[axis];
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { a, b, axis }))
    }

    /// Stack `n` tensors shaped `[B, L]` into `[B, n, L]`.
    pub fn stack(&mut self, frames: &[Var]) -> Result<Var> {
        let first = frames.first().ok_or_else(|| Error::shape("stack of zero frames"))?;
        let &[b, l] = self.value(*first).shape() else {
            return Err(Error::shape(format!("stack expects [B,L] frames, got {:?}", self.value(*first).shape())));
        };
        let n = frames.len();
        let mut data = vec![0.0; b * n * l];
        for (k, f) in frames.iter().enumerate() {
            let v = self.value(*f);
            if v.shape() != [b, l] {
                return Err(Error::shape(format!("stack frame {k} is {:?}, expected [{b}, {l}]", v.shape())));
            }
            for r in 0..b {
                data[(r * n + k) * l..(r * n + k + 1) * l].copy_from_slice(&v.data()[r * l..(r + 1) * l]);
            }
        }
        let value = Tensor::new(vec![b, n, l], data)?;
        Ok(self.push(value, Op::Stack(frames.to_vec())))
    }

    /// Frame `index` of a `[B, n, L]` tensor, as `[B, L]`.
    pub fn select(&mut self, input: Var, index: usize) -> Result<Var> {
        let x = self.value(input);
        let &[b, n, l] = x.shape() else {
            return Err(Error::shape(format!("select expects [B,n,L], got {:?}", x.shape())));
        };
        if index >= n {
            return Err(Error::shape(format!("frame {index} out of range for {n} frames")));
        }
        let mut data = Vec::with_capacity(b * l);
        for r in 0..b {
            data.extend_from_slice(&x.data()[(r * n + index) * l..(r * n + index + 1) * l]);
        }
        let value = Tensor::new(vec![b, l], data)?;
        Ok(self.push(value, Op::Select { input, index }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::shape(format!("backward needs a scalar loss, got shape {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        let mut visited = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if g.shape() != node.value.shape() {
                return Err(Error::shape(format!(
                    "node {i}: gradient shape {:?} differs from forward shape {:?}",
                    g.shape(),
                    node.value.shape()
                )));
            }
            visited.push(i);
            self.vjp(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, contribution: Vec<f64>) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => {
                let shape = self.nodes[var.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, contribution).expect("vjp matches forward shape"));
            }
        }
    }

    fn vjp(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        let wants = |v: &Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geo } => {
                let (gi, gk, gb) = conv2d_backward(geo, self.value(*input).data(), self.value(*kernel).data(), gd);
                self.accumulate(grads, *input, gi);
                self.accumulate(grads, *kernel, gk);
                self.accumulate(grads, *bias, gb);
            }
            Op::Linear { input, weight, bias } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, din) = (x.shape()[0], x.shape()[1]);
                let dout = w.shape()[0];
                if wants(input) {
                    let mut gx = vec![0.0; n * din];
                    for r in 0..n {
                        let dst = &mut gx[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let go = gd[r * dout + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (d, wv) in dst.iter_mut().zip(&w.data()[o * din..(o + 1) * din]) {
                                *d += go * wv;
                            }
                        }
                    }
                    self.accumulate(grads, *input, gx);
                }
                if wants(weight) {
                    let mut gw = vec![0.0; dout * din];
                    for r in 0..n {
                        let row = &x.data()[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let go = gd[r * dout + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (d, xv) in gw[o * din..(o + 1) * din].iter_mut().zip(row) {
                                *d += go * xv;
                            }
                        }
                    }
                    self.accumulate(grads, *weight, gw);
                }
                if wants(bias) {
                    let mut gb = vec![0.0; dout];
                    for r in 0..n {
                        for o in 0..dout {
                            gb[o] += gd[r * dout + o];
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let gx = x.iter().zip(gd).map(|(&v, &d)| if v >= 0.0 { d } else { slope * d }).collect();
                self.accumulate(grads, *input, gx);
            }
            Op::Dropout { input, scale } => {
                let gx = gd.iter().zip(scale).map(|(d, s)| d * s).collect();
                self.accumulate(grads, *input, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|d| -d).collect());
            }
            Op::Affine { input, scale } => {
                self.accumulate(grads, *input, gd.iter().map(|d| d * scale).collect());
            }
            Op::Sigmoid(input) => {
                let y = node.value.data();
                let gx = y.iter().zip(gd).map(|(s, d)| d * s * (1.0 - s)).collect();
                self.accumulate(grads, *input, gx);
            }
            Op::Ln(input) => {
                let x = self.value(*input).data();
                self.accumulate(grads, *input, x.iter().zip(gd).map(|(v, d)| d / v).collect());
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                let gx = x.iter().zip(gd).map(|(v, d)| if *v < *lo || *v > *hi { 0.0 } else { *d }).collect();
                self.accumulate(grads, *input, gx);
            }
            Op::SumSquares(input) => {
                let x = self.value(*input).data();
                let s = gd[0];
                self.accumulate(grads, *input, x.iter().map(|v| 2.0 * v * s).collect());
            }
            Op::Sum(input) => {
                let n = self.value(*input).numel();
                self.accumulate(grads, *input, vec![gd[0]; n]);
            }
            Op::Reshape(input) => {
                self.accumulate(grads, *input, gd.to_vec());
            }
            Op::Concat { a, b, axis } => {
                let (xs, ys) = (self.value(*a).shape(), self.value(*b).shape());
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let (xa, ya) = (xs[*axis] * inner, ys[*axis] * inner);
                let mut ga = Vec::with_capacity(outer * xa);
                let mut gb = Vec::with_capacity(outer * ya);
                for o in 0..outer {
                    let base = o * (xa + ya);
                    ga.extend_from_slice(&gd[base..base + xa]);
                    gb.extend_from_slice(&gd[base + xa..base + xa + ya]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Stack(frames) => {
                let (b, n, l) = (node.value.shape()[0], node.value.shape()[1], node.value.shape()[2]);
                for (k, f) in frames.iter().enumerate() {
                    if !wants(f) {
                        continue;
                    }
                    let mut gf = Vec::with_capacity(b * l);
                    for r in 0..b {
                        gf.extend_from_slice(&gd[(r * n + k) * l..(r * n + k + 1) * l]);
                    }
                    self.accumulate(grads, *f, gf);
                }
            }
            Op::Select { input, index } => {
                let xs = self.value(*input).shape();
                let (b, n, l) = (xs[0], xs[1], xs[2]);
                let mut gx = vec![0.0; b * n * l];
                for r in 0..b {
                    gx[(r * n + index) * l..(r * n + index + 1) * l].copy_from_slice(&gd[r * l..(r + 1) * l]);
                }
                self.accumulate(grads, *input, gx);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
