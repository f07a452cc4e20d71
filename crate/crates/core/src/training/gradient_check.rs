//! Finite-difference checks of the generator and discriminator objectives
//! on random parameters and random batches.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{generator_objective, loss_discriminator, GeneratorLoss};
use crate::error::{Error, Result};
use crate::model::{randomize, BoundGenerator, Ctx, HyperParams, ModelConfig, MotionModel, Parameters};
use crate::tensor::{grad_check_many, GradCheckOptions, GradCheckReport, Mode, Probe, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Reconstruction plus weight decay; no discriminator.
    Reconstruction,
    /// The full generator objective with a frozen discriminator.
    Adversarial,
    /// Binary cross-entropy of the discriminator on real and fake windows.
    Discriminator,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Reconstruction, Objective::Adversarial, Objective::Discriminator];

    pub fn label(self) -> &'static str {
        match self {
            Objective::Reconstruction => "generator (no adversary)",
            Objective::Adversarial => "generator (frozen adversary)",
            Objective::Discriminator => "discriminator",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckSetup {
    pub model: ModelConfig,
    pub hyper: HyperParams,
    pub pose_dim: usize,
    pub batch: usize,
}

impl CheckSetup {
    /// The small architecture: channels 8/16/16, fc 64, t=16, C=8, T=6,
    /// L=12, one sequence per batch.
    pub fn tiny() -> Self {
        CheckSetup { model: ModelConfig::tiny(), hyper: HyperParams::tiny(), pose_dim: 12, batch: 1 }
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

struct Point {
    model: MotionModel,
    hyper: HyperParams,
    seeds: Tensor,
    targets: Tensor,
    fake: Tensor,
    mask_seed: u64,
}

/// Random parameters, inputs and dropout-mask seed drawn from `seed`.
fn random_point(setup: &CheckSetup, seed: u64) -> Result<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hyper = setup.hyper.clone();
    hyper.batch_size = setup.batch;
    hyper.adversarial = true;
    let mut model = MotionModel::init(setup.model.clone(), hyper.clone(), setup.pose_dim, &mut rng)?;
    randomize(&mut model.generator, &mut rng);
    randomize(&mut model.discriminator, &mut rng);
    let (b, l) = (setup.batch, setup.pose_dim);
    let seeds = uniform(&[b, hyper.seed_len, l], &mut rng);
    let targets = uniform(&[b, hyper.target_len, l], &mut rng);
    let fake = uniform(&[b, hyper.target_len, l], &mut rng);
    let mask_seed: u64 = rng.random();
    Ok(Point { model, hyper, seeds, targets, fake, mask_seed })
}

/// Check every generator parameter against both generator objectives at a
/// random point drawn from `seed`. The reconstruction objective is the
/// partial sum `mse + lambda_l2 * l2` of the full objective's forward pass,
/// so one pair of perturbed evaluations serves both. Dropout stays active
/// with a mask that is identical across evaluations.
pub fn check_generator(
    setup: &CheckSetup,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<Vec<(Objective, GradCheckReport)>> {
    let pt = random_point(setup, seed)?;
    let names = pt.model.generator.names("");
    let mut params: Vec<Tensor> = pt.model.generator.tensors().into_iter().cloned().collect();
    let gen = RefCell::new(pt.model.generator.clone());
    let forward = |values: &[Tensor], want_grad: bool| -> Result<(Tape, GeneratorLoss, BoundGenerator)> {
        let mut gen = gen.borrow_mut();
        gen.assign(values)?;
        let mut tape = Tape::new();
        let bound = gen.bind(&mut tape, want_grad);
        let disc = pt.model.discriminator.bind(&mut tape, false);
        let s = tape.constant(pt.seeds.clone());
        let t = tape.constant(pt.targets.clone());
        let mut mask = ChaCha8Rng::seed_from_u64(pt.mask_seed);
        let mut ctx = Ctx { mode: Mode::Train, rng: &mut mask };
        let loss = generator_objective(&mut tape, &bound, Some(&disc), s, t, &pt.hyper, &mut ctx)?;
        Ok((tape, loss, bound))
    };
    let probe = |values: &[Tensor]| -> Result<Probe> {
        let (tape, loss, _) = forward(values, false)?;
        Ok(Probe {
            values: vec![tape.value(loss.reconstruction).item()?, tape.value(loss.total).item()?],
            regime: tape.regime(),
        })
    };
    let gradients = |values: &[Tensor]| -> Result<Vec<(f64, Vec<Tensor>)>> {
        let (tape, loss, bound) = forward(values, true)?;
        [loss.reconstruction, loss.total]
            .into_iter()
            .map(|root| {
                let grads = tape.backward(root)?;
                Ok((tape.value(root).item()?, bound.vars().into_iter().map(|v| grads.wrt(v)).collect()))
            })
            .collect()
    };
    let reports = grad_check_many(&names, &mut params, probe, gradients, opts)?;
    Ok([Objective::Reconstruction, Objective::Adversarial].into_iter().zip(reports).collect())
}

/// Check every discriminator parameter of the cross-entropy objective on
/// random real and generated windows.
pub fn check_discriminator(setup: &CheckSetup, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let pt = random_point(setup, seed)?;
    let names = pt.model.discriminator.names("disc");
    let mut params: Vec<Tensor> = pt.model.discriminator.tensors().into_iter().cloned().collect();
    let disc = RefCell::new(pt.model.discriminator.clone());
    let forward = |values: &[Tensor], want_grad: bool| -> Result<(Tape, Var, Vec<Var>)> {
        let mut disc = disc.borrow_mut();
        disc.assign(values)?;
        let mut tape = Tape::new();
        let bound = disc.bind(&mut tape, want_grad);
        let s = tape.constant(pt.seeds.clone());
        let t = tape.constant(pt.targets.clone());
        let f = tape.constant(pt.fake.clone());
        let real = tape.concat(s, t, 1)?;
        let gen = tape.concat(s, f, 1)?;
        let mut mask = ChaCha8Rng::seed_from_u64(pt.mask_seed);
        let mut ctx = Ctx { mode: Mode::Train, rng: &mut mask };
        let pr = bound.probability(&mut tape, real, &mut ctx)?;
        let pf = bound.probability(&mut tape, gen, &mut ctx)?;
        let loss = loss_discriminator(&mut tape, pr, pf)?;
        let mut vars = Vec::new();
        bound.vars(&mut vars);
        Ok((tape, loss, vars))
    };
    let probe = |values: &[Tensor]| -> Result<Probe> {
        let (tape, loss, _) = forward(values, false)?;
        Ok(Probe { values: vec![tape.value(loss).item()?], regime: tape.regime() })
    };
    let gradients = |values: &[Tensor]| -> Result<Vec<(f64, Vec<Tensor>)>> {
        let (tape, loss, vars) = forward(values, true)?;
        let grads = tape.backward(loss)?;
        Ok(vec![(tape.value(loss).item()?, vars.into_iter().map(|v| grads.wrt(v)).collect())])
    };
    Ok(grad_check_many(&names, &mut params, probe, gradients, opts)?.remove(0))
}

/// Check one objective at a random point drawn from `seed`.
pub fn check_objective(
    setup: &CheckSetup,
    objective: Objective,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    match objective {
        Objective::Discriminator => check_discriminator(setup, seed, opts),
        generator => check_generator(setup, seed, opts)?
            .into_iter()
            .find(|(o, _)| *o == generator)
            .map(|(_, r)| r)
            .ok_or_else(|| Error::Invalid(format!("no report for {}", generator.label()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CheckSetup {
        CheckSetup {
            model: ModelConfig { channels: [2, 2, 3], fc_out: 5, ..ModelConfig::default() },
            hyper: HyperParams { seed_len: 6, window: 3, target_len: 3, ..HyperParams::default() },
            pose_dim: 4,
            batch: 2,
        }
    }

    #[test]
    fn every_objective_passes_on_a_small_model() {
        for objective in Objective::ALL {
            let report = check_objective(&small(), objective, 11, &GradCheckOptions::default()).unwrap();
            assert!(report.passed(), "{}: {report}", objective.label());
        }
    }

    #[test]
    fn shared_pass_matches_separate_reconstruction_objective() {
        // The reconstruction value read off the full pass must equal the
        // objective evaluated without any discriminator.
        let setup = small();
        let pt = random_point(&setup, 3).unwrap();
        let value = |disc: bool| {
            let mut tape = Tape::new();
            let bound = pt.model.generator.bind(&mut tape, false);
            let d = disc.then(|| pt.model.discriminator.bind(&mut tape, false));
            let s = tape.constant(pt.seeds.clone());
            let t = tape.constant(pt.targets.clone());
            let mut mask = ChaCha8Rng::seed_from_u64(pt.mask_seed);
            let mut ctx = Ctx { mode: Mode::Train, rng: &mut mask };
            let mut hyper = pt.hyper.clone();
            hyper.adversarial = disc;
            let loss = generator_objective(&mut tape, &bound, d.as_ref(), s, t, &hyper, &mut ctx).unwrap();
            (tape.value(loss.reconstruction).item().unwrap(), tape.value(loss.total).item().unwrap())
        };
        let (rec_full, total_full) = value(true);
        let (rec_alone, total_alone) = value(false);
        assert_eq!(rec_full.to_bits(), rec_alone.to_bits());
        assert_eq!(total_alone.to_bits(), rec_alone.to_bits());
        assert!(total_full != rec_full);
    }

    #[test]
    fn decay_term_shows_in_decoder_gradient() {
        // With lambda_l2 = 0 the decoder output bias gradient only holds the
        // reconstruction part; the difference must equal 2 * lambda_l2 * w.
        let setup = small();
        let grad_of = |lambda: f64| {
            let mut hyper = setup.hyper.clone();
            hyper.lambda_l2 = lambda;
            hyper.dropout = 0.0;
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut model = MotionModel::init(setup.model.clone(), hyper.clone(), 4, &mut rng).unwrap();
            randomize(&mut model.generator, &mut rng);
            let mut tape = Tape::new();
            let bound = model.generator.bind(&mut tape, true);
            let s = tape.constant(uniform(&[2, 6, 4], &mut rng));
            let t = tape.constant(uniform(&[2, 3, 4], &mut rng));
            let mut ctx = Ctx { mode: Mode::Train, rng: &mut rng };
            let loss = generator_objective(&mut tape, &bound, None, s, t, &hyper, &mut ctx).unwrap();
            let grads = tape.backward(loss.total).unwrap();
            let last = *bound.vars().last().unwrap();
            (grads.wrt(last), model.generator.decoder.out.bias.clone())
        };
        let (g0, w) = grad_of(0.0);
        let (g1, _) = grad_of(0.001);
        for ((a, b), w) in g1.data().iter().zip(g0.data()).zip(w.data()) {
            assert!((a - b - 2.0 * 0.001 * w).abs() < 1e-12);
        }
    }
}
