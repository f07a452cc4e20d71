//! Parameter containers and their tape-bound forward passes.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::CemConfig;
use crate::error::{Error, Result};
use crate::tensor::{Mode, Tape, Tensor, Var};

/// Randomness and train/eval switch threaded through a forward pass.
pub struct Ctx<'r> {
    pub mode: Mode,
    pub rng: &'r mut dyn RngCore,
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut dyn RngCore) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

fn leaf(tape: &mut Tape, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

/// Ordered, named access to learnable tensors.
pub trait Parameters {
    fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>);

    fn names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        self.named_tensors(prefix, &mut out);
        out.into_iter().map(|(n, _)| n).collect()
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.named_tensors("", &mut out);
        out.into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Overwrite every tensor from `values`, in `named_tensors` order.
    fn assign(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = Vec::new();
        self.tensors_mut(&mut slots);
        if slots.len() != values.len() {
            return Err(Error::shape(format!("{} tensors given for {} parameters", values.len(), slots.len())));
        }
        for (slot, v) in slots.into_iter().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::shape(format!("parameter {:?} given {:?}", slot.shape(), v.shape())));
            }
            *slot = v.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut dyn RngCore) -> Self {
        Linear { weight: fan_in_uniform(&[out_dim, in_dim], in_dim, rng), bias: Tensor::zeros(&[out_dim]) }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear { weight: Tensor::zeros(&[out_dim, in_dim]), bias: Tensor::zeros(&[out_dim]) }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundLinear {
        BoundLinear { weight: leaf(tape, &self.weight, trainable), bias: leaf(tape, &self.bias, trainable) }
    }
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.weight, self.bias)
    }

    fn vars(&self, out: &mut Vec<Var>) {
        out.extend([self.weight, self.bias]);
    }
}

impl Parameters for Linear {
    fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Parameters for ConvLayer {
    fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.kernel"), &self.kernel));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.kernel);
        out.push(&mut self.bias);
    }
}

/// Convolutional encoding module.
#[derive(Clone, Debug, PartialEq)]
pub struct Cem {
    pub cfg: CemConfig,
    pub convs: Vec<ConvLayer>,
    pub fc: Linear,
}

#[derive(Clone, Debug)]
pub struct BoundCem {
    cfg: CemConfig,
    convs: Vec<(Var, Var)>,
    fc: BoundLinear,
}

impl Cem {
    pub fn init(cfg: CemConfig, rng: &mut dyn RngCore) -> Self {
        let (kh, kw) = (cfg.kernel.temporal, cfg.kernel.spatial);
        let convs = cfg
            .layers()
            .iter()
            .map(|l| ConvLayer {
                kernel: fan_in_uniform(&[l.out_channels, l.in_channels, kh, kw], l.in_channels * kh * kw, rng),
                bias: Tensor::zeros(&[l.out_channels]),
            })
            .collect();
        let fc = Linear::init(cfg.fc_out, cfg.flat_dim(), rng);
        Cem { cfg, convs, fc }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundCem {
        BoundCem {
            cfg: self.cfg.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| (leaf(tape, &c.kernel, trainable), leaf(tape, &c.bias, trainable)))
                .collect(),
            fc: self.fc.bind(tape, trainable),
        }
    }

    /// Eval-mode code for a single `[n x L]` sequence.
    pub fn encode(&self, frames: &Tensor, origin: CodeOrigin) -> Result<HiddenCode> {
        let &[n, l] = frames.shape() else {
            return Err(Error::shape(format!("expected [frames, pose] input, got {:?}", frames.shape())));
        };
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(frames.clone().reshape(&[1, n, l])?);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = bound.forward(&mut tape, x, &mut Ctx { mode: Mode::Eval, rng: &mut rng })?;
        Ok(HiddenCode { values: tape.value(z).data().to_vec(), origin })
    }
}

impl BoundCem {
    /// `[B, n, L]` frames to `[B, fc_out]` codes.
    pub fn forward(&self, tape: &mut Tape, frames: Var, ctx: &mut Ctx) -> Result<Var> {
        let shape = tape.value(frames).shape().to_vec();
        let &[b, n, l] = shape.as_slice() else {
            return Err(Error::shape(format!("encoder expects [B, n, L], got {shape:?}")));
        };
        if n != self.cfg.input_frames || l != self.cfg.pose_dim {
            return Err(Error::shape(format!(
                "encoder configured for {}x{} frames, got {n}x{l}",
                self.cfg.input_frames, self.cfg.pose_dim
            )));
        }
        let mut x = tape.reshape(frames, &[b, 1, n, l])?;
        for ((kernel, bias), geo) in self.convs.iter().zip(self.cfg.layers()) {
            x = tape.conv2d(x, *kernel, *bias, self.cfg.stride, geo.padding)?;
            x = tape.leaky_relu(x, self.cfg.leaky_slope)?;
        }
        x = tape.dropout(x, self.cfg.dropout, ctx.mode, &mut *ctx.rng)?;
        let flat = tape.reshape(x, &[b, self.cfg.flat_dim()])?;
        self.fc.forward(tape, flat)
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        for (k, b) in &self.convs {
            out.extend([*k, *b]);
        }
        self.fc.vars(out);
    }
}

impl Parameters for Cem {
    fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.named_tensors(&format!("{prefix}.conv{i}"), out);
        }
        self.fc.named_tensors(&format!("{prefix}.fc"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for c in &mut self.convs {
            c.tensors_mut(out);
        }
        self.fc.tensors_mut(out);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeOrigin {
    Long,
    Short,
}

/// Encoder output for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenCode {
    pub values: Vec<f64>,
    pub origin: CodeOrigin,
}

/// Two affine layers mapping concatenated codes to a pose residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub hidden: Linear,
    pub out: Linear,
    pub leaky_slope: f64,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct BoundDecoder {
    hidden: BoundLinear,
    out: BoundLinear,
    leaky_slope: f64,
    dropout: f64,
}

impl Decoder {
    /// The output layer starts at zero so an untrained model repeats the
    /// last observed frame.
    pub fn init(code_dim: usize, pose_dim: usize, leaky_slope: f64, dropout: f64, rng: &mut dyn RngCore) -> Self {
        Decoder {
            hidden: Linear::init(code_dim, 2 * code_dim, rng),
            out: Linear::zeros(pose_dim, code_dim),
            leaky_slope,
            dropout,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDecoder {
        BoundDecoder {
            hidden: self.hidden.bind(tape, trainable),
            out: self.out.bind(tape, trainable),
            leaky_slope: self.leaky_slope,
            dropout: self.dropout,
        }
    }

    /// Eval-mode single step: `prev + h_d([long, short])`.
    pub fn step(&self, long: &HiddenCode, short: &HiddenCode, prev: &[f64]) -> Result<Vec<f64>> {
        let code = self.hidden.weight.shape()[0];
        if long.values.len() != code || short.values.len() != code {
            return Err(Error::shape(format!(
                "codes of length {} and {} given, decoder expects {code}",
                long.values.len(),
                short.values.len()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zl = tape.constant(Tensor::new(vec![1, code], long.values.clone())?);
        let zs = tape.constant(Tensor::new(vec![1, code], short.values.clone())?);
        let p = tape.constant(Tensor::new(vec![1, prev.len()], prev.to_vec())?);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = bound.forward(&mut tape, zl, zs, p, &mut Ctx { mode: Mode::Eval, rng: &mut rng })?;
        Ok(tape.value(y).data().to_vec())
    }
}

impl BoundDecoder {
    pub fn forward(&self, tape: &mut Tape, long: Var, short: Var, prev: Var, ctx: &mut Ctx) -> Result<Var> {
        let z = tape.concat(long, short, 1)?;
        let h = self.hidden.forward(tape, z)?;
        let h = tape.leaky_relu(h, self.leaky_slope)?;
        let h = tape.dropout(h, self.dropout, ctx.mode, &mut *ctx.rng)?;
        let residual = self.out.forward(tape, h)?;
        tape.add(prev, residual)
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        self.hidden.vars(out);
        self.out.vars(out);
    }
}

impl Parameters for Decoder {
    fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.hidden.named_tensors(&format!("{prefix}.hidden"), out);
        self.out.named_tensors(&format!("{prefix}.out"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.hidden.tensors_mut(out);
        self.out.tensors_mut(out);
    }
}

/// Sequence classifier: an encoding module over the full seed+target grid
/// followed by a single-logit head.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub cem: Cem,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct BoundDiscriminator {
    cem: BoundCem,
    head: BoundLinear,
    leaky_slope: f64,
}

impl Discriminator {
    pub fn init(cfg: CemConfig, rng: &mut dyn RngCore) -> Self {
        let width = cfg.fc_out;
        let cem = Cem::init(cfg, rng);
        Discriminator { cem, head: Linear::init(1, width, rng) }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDiscriminator {
        BoundDiscriminator {
            cem: self.cem.bind(tape, trainable),
            head: self.head.bind(tape, trainable),
            leaky_slope: self.cem.cfg.leaky_slope,
        }
    }

    /// Eval-mode probability that each `[t+T, L]` sequence is real.
    pub fn discriminate(&self, full: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(full.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = bound.probability(&mut tape, x, &mut Ctx { mode: Mode::Eval, rng: &mut rng })?;
        Ok(tape.value(p).data().to_vec())
    }
}

impl BoundDiscriminator {
    /// `[B, t+T, L]` sequences to `[B, 1]` logits.
    pub fn logits(&self, tape: &mut Tape, full: Var, ctx: &mut Ctx) -> Result<Var> {
        let code = self.cem.forward(tape, full, ctx)?;
        let code = tape.leaky_relu(code, self.leaky_slope)?;
        self.head.forward(tape, code)
    }

    pub fn probability(&self, tape: &mut Tape, full: Var, ctx: &mut Ctx) -> Result<Var> {
        let logits = self.logits(tape, full, ctx)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        self.cem.vars(out);
        self.head.vars(out);
    }
}

impl Parameters for Discriminator {
    fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.cem.named_tensors(prefix, out);
        self.head.named_tensors(&format!("{prefix}.head"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.cem.tensors_mut(out);
        self.head.tensors_mut(out);
    }
}

/// Scramble every tensor with fan-in scaled uniform noise, including the
/// zero-initialized decoder output layer and all biases.
pub fn randomize<P: Parameters + ?Sized>(params: &mut P, rng: &mut dyn RngCore) {
    let mut slots = Vec::new();
    params.tensors_mut(&mut slots);
    for t in slots {
        let fan_in = if t.rank() == 1 { t.numel() } else { t.numel() / t.shape()[0] };
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in t.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    }
}

/// Set every tensor to zero.
pub fn zero<P: Parameters + ?Sized>(params: &mut P) {
    let mut slots = Vec::new();
    params.tensors_mut(&mut slots);
    for t in slots {
        t.data_mut().fill(0.0);
    }
}
