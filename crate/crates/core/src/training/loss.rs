//! Reconstruction, weight-decay and adversarial objectives.

use crate::error::{Error, Result};
use crate::model::{discriminate_sequences, BoundDiscriminator, BoundGenerator, Ctx, HyperParams, RolloutOptions};
use crate::tensor::{Tape, Var};

/// Probabilities are clamped into this band before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Squared error summed over frames and pose dims, divided by the number of
/// frames, averaged over the batch.
pub fn loss_mse(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let shape = tape.value(pred).shape().to_vec();
    if shape != tape.value(target).shape() {
        return Err(Error::shape(format!("prediction {shape:?} vs target {:?}", tape.value(target).shape())));
    }
    let &[b, t, _] = shape.as_slice() else {
        return Err(Error::shape(format!("expected [B, T, L], got {shape:?}")));
    };
    let diff = tape.sub(pred, target)?;
    let ss = tape.sum_squares(diff);
    Ok(tape.affine(ss, 1.0 / (b * t) as f64, 0.0))
}

fn safe_log(tape: &mut Tape, p: Var) -> Result<Var> {
    let c = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    tape.ln(c)
}

/// `mean(-ln D)` over a batch of probabilities.
pub fn neg_mean_log(tape: &mut Tape, prob: Var) -> Result<Var> {
    let l = safe_log(tape, prob)?;
    let m = tape.mean(l);
    Ok(tape.affine(m, -1.0, 0.0))
}

/// Batch-mean binary cross-entropy: `-mean ln D(real) - mean ln(1 - D(fake))`.
pub fn loss_discriminator(tape: &mut Tape, real_prob: Var, fake_prob: Var) -> Result<Var> {
    let real = neg_mean_log(tape, real_prob)?;
    let one_minus = tape.affine(fake_prob, -1.0, 1.0);
    let fake = neg_mean_log(tape, one_minus)?;
    tape.add(real, fake)
}

/// Sum of squares of every listed parameter.
pub fn l2_penalty(tape: &mut Tape, params: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &p in params {
        let s = tape.sum_squares(p);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    acc.ok_or_else(|| Error::Invalid("no parameters for the L2 term".into()))
}

/// Graph nodes of one generator objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    /// `mse + lambda_l2 * l2`, the objective without the adversarial term.
    pub reconstruction: Var,
    pub mse: Var,
    pub l2: Var,
    /// `-mean ln D(fake)`, present when a discriminator was supplied.
    pub adv: Option<Var>,
    /// `[B, T, L]` predicted continuation.
    pub prediction: Var,
}

/// Plain values of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub mse: f64,
    pub l2: f64,
    pub adv: f64,
    pub total: f64,
}

impl GeneratorLoss {
    pub fn terms(&self, tape: &Tape) -> Result<LossTerms> {
        Ok(LossTerms {
            mse: tape.value(self.mse).item()?,
            l2: tape.value(self.l2).item()?,
            adv: match self.adv {
                Some(a) => tape.value(a).item()?,
                None => 0.0,
            },
            total: tape.value(self.total).item()?,
        })
    }
}

/// `mse + lambda_l2 * |w_gen|^2 + lambda_adv * (-mean ln D(fake))`.
///
/// `disc` should be bound as constants so its parameters stay frozen; it is
/// evaluated whenever present, even at zero adversarial weight, so the term
/// can be reported.
pub fn generator_objective(
    tape: &mut Tape,
    gen: &BoundGenerator,
    disc: Option<&BoundDiscriminator>,
    seed: Var,
    target: Var,
    hyper: &HyperParams,
    ctx: &mut Ctx,
) -> Result<GeneratorLoss> {
    let target_len = tape.value(target).shape().get(1).copied().unwrap_or(0);
    let teacher = (hyper.eta < 1.0).then_some(target);
    let opts = RolloutOptions { target_len, eta: hyper.eta, teacher, trace: false };
    let rollout = gen.rollout(tape, seed, opts, ctx)?;
    let prediction = rollout.sequence;

    let mse = loss_mse(tape, prediction, target)?;
    let l2 = l2_penalty(tape, &gen.vars())?;
    let weighted_l2 = tape.affine(l2, hyper.lambda_l2, 0.0);
    let reconstruction = tape.add(mse, weighted_l2)?;
    let mut total = reconstruction;

    let adv = match disc {
        Some(d) => {
            let p = discriminate_sequences(d, tape, seed, prediction, ctx)?;
            let adv = neg_mean_log(tape, p)?;
            let weighted = tape.affine(adv, hyper.effective_lambda_adv(), 0.0);
            total = tape.add(total, weighted)?;
            Some(adv)
        }
        None => None,
    };
    Ok(GeneratorLoss { total, reconstruction, mse, l2, adv, prediction })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn mse_identity_and_closed_form() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(&[1, 1, 1], 2.0));
        let z = tape.constant(Tensor::zeros(&[1, 1, 1]));
        let l = loss_mse(&mut tape, a, z).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 4.0);
        let same = loss_mse(&mut tape, a, a).unwrap();
        assert_eq!(tape.value(same).item().unwrap(), 0.0);
    }

    #[test]
    fn mse_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (b, t, l) = (3, 5, 7);
        let p = random(&[b, t, l], &mut rng);
        let q = random(&[b, t, l], &mut rng);
        let mut want = 0.0;
        for i in 0..b {
            let mut per_seq = 0.0;
            for j in 0..t {
                for k in 0..l {
                    let idx = (i * t + j) * l + k;
                    per_seq += (p.data()[idx] - q.data()[idx]).powi(2);
                }
            }
            want += per_seq / t as f64;
        }
        want /= b as f64;
        let mut tape = Tape::new();
        let (pv, qv) = (tape.constant(p), tape.constant(q));
        let got = loss_mse(&mut tape, pv, qv).unwrap();
        assert!((tape.value(got).item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn mse_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[1, 2, 3]));
        let b = tape.constant(Tensor::zeros(&[1, 3, 2]));
        assert!(loss_mse(&mut tape, a, b).is_err());
    }

    fn d_loss(real: &[f64], fake: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::new(vec![real.len(), 1], real.to_vec()).unwrap());
        let f = tape.constant(Tensor::new(vec![fake.len(), 1], fake.to_vec()).unwrap());
        let l = loss_discriminator(&mut tape, r, f).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn discriminator_loss_values() {
        assert!((d_loss(&[0.5], &[0.5]) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(d_loss(&[1.0, 1.0], &[0.0, 0.0]) < 1e-6);
        assert!(d_loss(&[0.0], &[1.0]).is_finite());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let real: Vec<f64> = (0..9).map(|_| rng.random_range(0.01..0.99)).collect();
        let fake: Vec<f64> = (0..9).map(|_| rng.random_range(0.01..0.99)).collect();
        let want =
            -real.iter().map(|p| p.ln()).sum::<f64>() / 9.0 - fake.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / 9.0;
        assert!((d_loss(&real, &fake) - want).abs() < 1e-12);
    }

    #[test]
    fn l2_is_sum_of_squares() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let b = tape.param(Tensor::new(vec![1], vec![3.0]).unwrap());
        let l = l2_penalty(&mut tape, &[a, b]).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 14.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(a).data(), &[2.0, -4.0]);
        assert!(l2_penalty(&mut tape, &[]).is_err());
    }

    #[test]
    fn neg_log_is_clamped() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap());
        let l = neg_mean_log(&mut tape, p).unwrap();
        let v = tape.value(l).item().unwrap();
        assert!((v - (-(PROB_CLAMP.ln()) - (1.0 - PROB_CLAMP).ln()) / 2.0).abs() < 1e-12);
    }
}
