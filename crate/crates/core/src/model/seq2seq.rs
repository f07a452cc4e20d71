//! Long/short-term encoders with the residual decoder, applied recursively.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{CemConfig, HyperParams, ModelConfig};
use super::layers::{BoundCem, BoundDecoder, BoundDiscriminator, Cem, Ctx, Decoder, Discriminator, Parameters};
use crate::error::{Error, Result};
use crate::tensor::{Mode, Tape, Tensor, Var};

/// Encoders plus decoder: everything the generator objective updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    /// `None` when the long-term encoder is ablated.
    pub long: Option<Cem>,
    pub short: Cem,
    pub decoder: Decoder,
    pub seed_len: usize,
    pub window: usize,
    pub pose_dim: usize,
    pub code_dim: usize,
}

#[derive(Clone, Debug)]
pub struct BoundGenerator {
    long: Option<BoundCem>,
    short: BoundCem,
    decoder: BoundDecoder,
    seed_len: usize,
    window: usize,
    code_dim: usize,
}

/// How a rollout feeds its own output back into the short-term window.
#[derive(Clone, Copy, Debug)]
pub struct RolloutOptions {
    pub target_len: usize,
    /// Blend weight of predicted frames against `teacher` frames.
    pub eta: f64,
    /// `[B, T, L]` ground truth; only consulted in train mode.
    pub teacher: Option<Var>,
    /// Record the value of every short-term window.
    pub trace: bool,
}

impl RolloutOptions {
    pub fn closed_loop(target_len: usize) -> Self {
        RolloutOptions { target_len, eta: 1.0, teacher: None, trace: false }
    }
}

pub struct Rollout {
    /// One `[B, L]` prediction per step.
    pub frames: Vec<Var>,
    /// All predictions stacked as `[B, T, L]`.
    pub sequence: Var,
    /// `[B, code]` long-term code, computed once.
    pub long_code: Var,
    /// `[B, C, L]` value of the window seen at each step, when traced.
    pub windows: Vec<Tensor>,
}

impl Generator {
    pub fn init(model: &ModelConfig, hyper: &HyperParams, pose_dim: usize, rng: &mut dyn RngCore) -> Result<Self> {
        model.validate()?;
        hyper.validate()?;
        let long_cfg = CemConfig::new(hyper.seed_len, pose_dim, model, hyper.dropout);
        let short_cfg = CemConfig::new(hyper.window, pose_dim, model, hyper.dropout);
        let long = model.long_term.then(|| Cem::init(long_cfg, rng));
        let short = Cem::init(short_cfg, rng);
        let decoder = Decoder::init(model.fc_out, pose_dim, model.leaky_slope, hyper.dropout, rng);
        Ok(Generator {
            long,
            short,
            decoder,
            seed_len: hyper.seed_len,
            window: hyper.window,
            pose_dim,
            code_dim: model.fc_out,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundGenerator {
        BoundGenerator {
            long: self.long.as_ref().map(|c| c.bind(tape, trainable)),
            short: self.short.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
            seed_len: self.seed_len,
            window: self.window,
            code_dim: self.code_dim,
        }
    }

    /// Eval-mode prediction of `target_len` frames after each `[B, t, L]` seed.
    pub fn predict(&self, seeds: &Tensor, target_len: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let seed = tape.constant(seeds.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx { mode: Mode::Eval, rng: &mut rng };
        let out = bound.rollout(&mut tape, seed, RolloutOptions::closed_loop(target_len), &mut ctx)?;
        Ok(tape.value(out.sequence).clone())
    }
}

impl BoundGenerator {
    /// Encode the seed once, then run the short-term encoder and decoder
    /// recursively for `opts.target_len` steps.
    pub fn rollout(&self, tape: &mut Tape, seed: Var, opts: RolloutOptions, ctx: &mut Ctx) -> Result<Rollout> {
        let shape = tape.value(seed).shape().to_vec();
        let &[batch, seed_len, pose_dim] = shape.as_slice() else {
            return Err(Error::shape(format!("seed must be [B, t, L], got {shape:?}")));
        };
        if seed_len != self.seed_len {
            return Err(Error::shape(format!("seed has {seed_len} frames, model expects {}", self.seed_len)));
        }
        if opts.target_len == 0 {
            return Err(Error::Invalid("target length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&opts.eta) {
            return Err(Error::Invalid(format!("eta must lie in [0,1], got {}", opts.eta)));
        }
        let teacher = match (opts.teacher, ctx.mode) {
            (Some(t), Mode::Train) => {
                let ts = tape.value(t).shape();
                if ts != [batch, opts.target_len, pose_dim] {
                    return Err(Error::shape(format!(
                        "teacher must be [{batch}, {}, {pose_dim}], got {ts:?}",
                        opts.target_len
                    )));
                }
                Some(t)
            }
            (Some(_), Mode::Eval) => return Err(Error::Invalid("teacher frames are only used in train mode".into())),
            (None, _) => None,
        };

        let long_code = match &self.long {
            Some(long) => long.forward(tape, seed, ctx)?,
            None => tape.constant(Tensor::zeros(&[batch, self.code_dim])),
        };

        let mut history: Vec<Var> =
            (seed_len - self.window..seed_len).map(|i| tape.select(seed, i)).collect::<Result<_>>()?;
        let mut prev = *history.last().expect("window is non-empty");
        let mut frames = Vec::with_capacity(opts.target_len);
        let mut windows = Vec::new();

        for k in 0..opts.target_len {
            let window = tape.stack(&history[history.len() - self.window..])?;
            if opts.trace {
                windows.push(tape.value(window).clone());
            }
            let short_code = self.short.forward(tape, window, ctx)?;
            let pred = self.decoder.forward(tape, long_code, short_code, prev, ctx)?;
            frames.push(pred);
            prev = pred;

            let fed_back = match teacher {
                Some(t) if opts.eta < 1.0 => {
                    let truth = tape.select(t, k)?;
                    if opts.eta == 0.0 {
                        truth
                    } else {
                        let p = tape.affine(pred, opts.eta, 0.0);
                        let g = tape.affine(truth, 1.0 - opts.eta, 0.0);
                        tape.add(p, g)?
                    }
                }
                _ => pred,
            };
            history.push(fed_back);
        }
        let sequence = tape.stack(&frames)?;
        Ok(Rollout { frames, sequence, long_code, windows })
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(long) = &self.long {
            long.vars(&mut out);
        }
        self.short.vars(&mut out);
        self.decoder.vars(&mut out);
        out
    }
}

impl Parameters for Generator {
    fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        if let Some(long) = &self.long {
            long.named_tensors(&format!("{prefix}long"), out);
        }
        self.short.named_tensors(&format!("{prefix}short"), out);
        self.decoder.named_tensors(&format!("{prefix}decoder"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        if let Some(long) = &mut self.long {
            long.tensors_mut(out);
        }
        self.short.tensors_mut(out);
        self.decoder.tensors_mut(out);
    }
}

/// Generator and discriminator together with the configuration that built
/// them.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionModel {
    pub model: ModelConfig,
    pub hyper: HyperParams,
    pub pose_dim: usize,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl MotionModel {
    pub fn init(model: ModelConfig, hyper: HyperParams, pose_dim: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let generator = Generator::init(&model, &hyper, pose_dim, rng)?;
        let disc_dropout = if model.discriminator_dropout { hyper.dropout } else { 0.0 };
        let disc_cfg = CemConfig::new(hyper.seed_len + hyper.target_len, pose_dim, &model, disc_dropout);
        let discriminator = Discriminator::init(disc_cfg, rng);
        Ok(MotionModel { model, hyper, pose_dim, generator, discriminator })
    }

    /// Eval-mode prediction of `hyper.target_len` frames per `[B, t, L]` seed.
    pub fn predict(&self, seeds: &Tensor) -> Result<Tensor> {
        self.generator.predict(seeds, self.hyper.target_len)
    }
}

/// Concatenate `[B, t, L]` seeds with `[B, T, L]` continuations and score
/// them.
pub fn discriminate_sequences(
    disc: &BoundDiscriminator,
    tape: &mut Tape,
    seed: Var,
    continuation: Var,
    ctx: &mut Ctx,
) -> Result<Var> {
    let full = tape.concat(seed, continuation, 1)?;
    disc.probability(tape, full, ctx)
}
