use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{clip_global_norm, AdamState};
use super::batch::{Batch, BatchSampler};
use super::checkpoint::{Checkpoint, ValidationState};
use super::config::TrainConfig;
use super::loss::{generator_objective, loss_discriminator, LossTerms};
use crate::error::{Error, Result};
use crate::mocap::Corpus;
use crate::model::{Ctx, Discriminator, Generator, HyperParams, MotionModel, Parameters};
use crate::tensor::{Mode, Tape, Tensor};

/// Generator for everything random in iteration `iteration` (1-based);
/// stream 0 is reserved for parameter initialization.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Losses recorded for one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub mse: f64,
    pub l2: f64,
    /// `-mean ln D(fake)`, before weighting.
    pub adv: f64,
    pub d_loss: f64,
    pub total: f64,
    pub ms_per_iter: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iteration,mse,l2,adv,d_loss,total,ms_per_iter";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.iteration, self.mse, self.l2, self.adv, self.d_loss, self.total, self.ms_per_iter
        )
    }

    /// `mse + lambda_l2 * l2 + lambda_adv * adv`.
    pub fn weighted_total(&self, hyper: &HyperParams) -> f64 {
        self.mse + hyper.lambda_l2 * self.l2 + hyper.effective_lambda_adv() * self.adv
    }
}

/// One generator update on `batch`. The discriminator, if given, is frozen.
/// Returns the loss terms and the detached `[B, T, L]` prediction.
#[allow(clippy::too_many_arguments)]
pub fn generator_step(
    gen: &mut Generator,
    disc: Option<&Discriminator>,
    adam: &mut AdamState,
    batch: &Batch,
    hyper: &HyperParams,
    grad_clip: Option<f64>,
    rng: &mut dyn RngCore,
) -> Result<(LossTerms, Tensor)> {
    let mut tape = Tape::new();
    let bound = gen.bind(&mut tape, true);
    let bound_disc = disc.map(|d| d.bind(&mut tape, false));
    let seed = tape.constant(batch.seeds.clone());
    let target = tape.constant(batch.targets.clone());
    let mut ctx = Ctx { mode: Mode::Train, rng };
    let loss = generator_objective(&mut tape, &bound, bound_disc.as_ref(), seed, target, hyper, &mut ctx)?;
    let terms = loss.terms(&tape)?;
    if !terms.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "generator loss {} (mse {}, l2 {}, adv {})",
            terms.total, terms.mse, terms.l2, terms.adv
        )));
    }
    let grads = tape.backward(loss.total)?;
    let mut g: Vec<Tensor> = bound.vars().into_iter().map(|v| grads.wrt(v)).collect();
    if let Some(c) = grad_clip {
        clip_global_norm(&mut g, c);
    }
    let prediction = tape.value(loss.prediction).clone();
    let names = gen.names("");
    let mut slots = Vec::new();
    gen.tensors_mut(&mut slots);
    adam.update(&names, &mut slots, &g, hyper.learning_rate)?;
    Ok((terms, prediction))
}

/// One discriminator update on real `[seed, target]` against
/// `[seed, fake]`. Returns the loss before the update.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_step(
    disc: &mut Discriminator,
    adam: &mut AdamState,
    seeds: &Tensor,
    targets: &Tensor,
    fake: &Tensor,
    lr: f64,
    grad_clip: Option<f64>,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = disc.bind(&mut tape, true);
    let s = tape.constant(seeds.clone());
    let t = tape.constant(targets.clone());
    let f = tape.constant(fake.clone());
    let real_full = tape.concat(s, t, 1)?;
    let fake_full = tape.concat(s, f, 1)?;
    let mut ctx = Ctx { mode: Mode::Train, rng };
    let p_real = bound.probability(&mut tape, real_full, &mut ctx)?;
    let p_fake = bound.probability(&mut tape, fake_full, &mut ctx)?;
    let loss = loss_discriminator(&mut tape, p_real, p_fake)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss {value}")));
    }
    let grads = tape.backward(loss)?;
    let mut vars = Vec::new();
    bound.vars(&mut vars);
    let mut g: Vec<Tensor> = vars.into_iter().map(|v| grads.wrt(v)).collect();
    if let Some(c) = grad_clip {
        clip_global_norm(&mut g, c);
    }
    let names: Vec<String> = disc.names("disc");
    let mut slots = Vec::new();
    disc.tensors_mut(&mut slots);
    adam.update(&names, &mut slots, &g, lr)?;
    Ok(value)
}

/// Mean eval-mode MSE of closed-loop predictions over fixed windows.
pub fn evaluation_mse(gen: &Generator, batch: &Batch) -> Result<f64> {
    let pred = gen.predict(&batch.seeds, batch.targets.shape()[1])?;
    let frames = batch.len() * batch.targets.shape()[1];
    Ok(pred.data().iter().zip(batch.targets.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / frames as f64)
}

/// Alternating generator/discriminator optimization over a corpus.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: MotionModel,
    pub adam_generator: AdamState,
    pub adam_discriminator: AdamState,
    /// Number of completed iterations.
    pub iteration: u64,
    pub validation: ValidationState,
    corpus: Corpus,
    sampler: BatchSampler,
    validation_batch: Option<Batch>,
}

/// How a call to [`Trainer::run`] ended.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub iterations: u64,
    pub stopped_early: bool,
    pub last: Option<IterationRecord>,
    pub checkpoints: Vec<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig, corpus: Corpus) -> Result<Trainer> {
        config.validate()?;
        let mut rng = iteration_rng(config.schedule.seed, 0);
        let model = MotionModel::init(config.model.clone(), config.hyper.clone(), corpus.pose_dim(), &mut rng)?;
        let adam_generator = AdamState::new(&model.generator.tensors());
        let adam_discriminator = AdamState::new(&model.discriminator.tensors());
        let sampler = BatchSampler::new(&corpus, config.hyper.seed_len, config.hyper.target_len)?;
        Ok(Trainer {
            config,
            model,
            adam_generator,
            adam_discriminator,
            iteration: 0,
            validation: ValidationState::default(),
            corpus,
            sampler,
            validation_batch: None,
        })
    }

    /// Continue from `ck`; `corpus` must carry the statistics it was trained
    /// with.
    pub fn resume(ck: Checkpoint, corpus: Corpus) -> Result<Trainer> {
        ck.check_stats(&corpus.stats)?;
        let sampler = BatchSampler::new(&corpus, ck.config.hyper.seed_len, ck.config.hyper.target_len)?;
        Ok(Trainer {
            config: ck.config,
            model: ck.model,
            adam_generator: ck.adam_generator,
            adam_discriminator: ck.adam_discriminator,
            iteration: ck.iteration,
            validation: ck.validation,
            corpus,
            sampler,
            validation_batch: None,
        })
    }

    /// Track eval-mode MSE on fixed windows drawn from `corpus`.
    pub fn with_validation(mut self, corpus: &Corpus) -> Result<Trainer> {
        let (expected, found) = (self.corpus.stats.fingerprint(), corpus.stats.fingerprint());
        if expected != found {
            return Err(Error::Fingerprint { expected, found });
        }
        let h = &self.config.hyper;
        let sampler = BatchSampler::new(corpus, h.seed_len, h.target_len)?;
        let mut rng = iteration_rng(self.config.schedule.seed, u64::MAX);
        self.validation_batch = Some(sampler.sample(corpus, h.batch_size.max(32), &mut rng)?);
        Ok(self)
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            config: self.config.clone(),
            pose_dim: self.model.pose_dim,
            stats_fingerprint: self.corpus.stats.fingerprint(),
            model: self.model.clone(),
            adam_generator: self.adam_generator.clone(),
            adam_discriminator: self.adam_discriminator.clone(),
            validation: self.validation.clone(),
        }
    }

    /// Run one generator update followed by one discriminator update on the
    /// generator's detached predictions.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let start = Instant::now();
        let it = self.iteration + 1;
        let mut rng = iteration_rng(self.config.schedule.seed, it);
        let h = self.config.hyper.clone();
        let clip = self.config.schedule.grad_clip;
        let batch = self.sampler.sample(&self.corpus, h.batch_size, &mut rng)?;

        let disc = h.adversarial.then_some(&self.model.discriminator);
        let (terms, fake) =
            generator_step(&mut self.model.generator, disc, &mut self.adam_generator, &batch, &h, clip, &mut rng)
                .map_err(|e| Error::Invalid(format!("iteration {it}: {e}")))?;
        let d_loss = if h.adversarial {
            discriminator_step(
                &mut self.model.discriminator,
                &mut self.adam_discriminator,
                &batch.seeds,
                &batch.targets,
                &fake,
                h.learning_rate,
                clip,
                &mut rng,
            )
            .map_err(|e| Error::Invalid(format!("iteration {it}: {e}")))?
        } else {
            0.0
        };
        self.iteration = it;
        Ok(IterationRecord {
            iteration: it,
            mse: terms.mse,
            l2: terms.l2,
            adv: terms.adv,
            d_loss,
            total: terms.total,
            ms_per_iter: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Validation MSE, updating the best value and writing `best.ckpt` into
    /// `out_dir` on improvement.
    fn validate(&mut self, out_dir: Option<&Path>) -> Result<Option<f64>> {
        let Some(batch) = &self.validation_batch else {
            return Ok(None);
        };
        let mse = evaluation_mse(&self.model.generator, batch)?;
        if self.validation.best.is_none_or(|b| mse < b) {
            self.validation.best = Some(mse);
            self.validation.stale = 0;
            if let Some(dir) = out_dir {
                self.checkpoint().save(&dir.join("best.ckpt"))?;
            }
        } else {
            self.validation.stale += 1;
        }
        Ok(Some(mse))
    }

    /// Train until `self.iteration == until`, streaming CSV rows to `report`
    /// and writing `iter_<n>.ckpt` every `checkpoint_every` iterations plus
    /// `final.ckpt` into `out_dir`.
    pub fn run(&mut self, until: u64, out_dir: Option<&Path>, report: &mut dyn Write) -> Result<RunSummary> {
        let io = |e| Error::io("train report", e);
        if self.iteration == 0 {
            writeln!(report, "{}", IterationRecord::CSV_HEADER).map_err(io)?;
        }
        let mut summary = RunSummary { iterations: 0, stopped_early: false, last: None, checkpoints: Vec::new() };
        let s = self.config.schedule.clone();
        while self.iteration < until {
            let rec = self.step()?;
            writeln!(report, "{}", rec.csv_row()).map_err(io)?;
            summary.iterations += 1;
            summary.last = Some(rec);
            if s.validate_every > 0 && self.iteration % s.validate_every == 0 {
                self.validate(out_dir)?;
                if s.patience > 0 && self.validation.stale >= s.patience {
                    summary.stopped_early = true;
                    break;
                }
            }
            if let Some(dir) = out_dir {
                if self.iteration % s.checkpoint_every == 0 {
                    let p = dir.join(format!("iter_{:08}.ckpt", self.iteration));
                    self.checkpoint().save(&p)?;
                    summary.checkpoints.push(p);
                }
            }
        }
        report.flush().map_err(io)?;
        if let Some(dir) = out_dir {
            let p = dir.join("final.ckpt");
            self.checkpoint().save(&p)?;
            summary.checkpoints.push(p);
        }
        Ok(summary)
    }
}
