//! Sum-of-sinusoids motion corpus in the dataset file format.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frames::{FrameMatrix, RawTrial, FRAME_PERIOD_MS};
use super::stats::DEFAULT_GLOBAL_DIMS;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub joints: usize,
    pub frames: usize,
    /// Fundamental frequency band in Hz.
    pub freq_band: (f64, f64),
    pub seed: u64,
    pub subjects: Vec<String>,
    pub actions: Vec<String>,
    pub trials_per_action: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            joints: 4,
            frames: 200,
            freq_band: (0.3, 1.2),
            seed: 0,
            subjects: vec!["S1".into(), "S5".into()],
            actions: vec!["walking".into(), "waving".into()],
            trials_per_action: 2,
        }
    }
}

impl SynthConfig {
    /// Raw frame width: root translation, root orientation, then joints.
    pub fn raw_dim(&self) -> usize {
        DEFAULT_GLOBAL_DIMS + 3 * self.joints
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.freq_band;
        if self.joints == 0 || self.frames == 0 || self.trials_per_action == 0 {
            return Err(Error::Invalid("joints, frames and trials must be positive".into()));
        }
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Invalid(format!("bad frequency band {lo}..{hi}")));
        }
        if self.subjects.is_empty() || self.actions.is_empty() {
            return Err(Error::Invalid("need at least one subject and one action".into()));
        }
        Ok(())
    }
}

struct Component {
    amplitude: f64,
    frequency: f64,
    phase: f64,
    harmonic: f64,
    offset: f64,
}

/// One trial per (subject, action, trial index). Every action has its own
/// per-joint frequencies; joints within a trial share a phase that is
/// shifted by a fixed coupling per joint index.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<RawTrial>> {
    cfg.validate()?;
    let mut base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.freq_band;
    let width = cfg.raw_dim();
    let dt = FRAME_PERIOD_MS / 1000.0;

    let mut trials = Vec::new();
    for action in &cfg.actions {
        let coupling = base.random_range(0.2..1.0);
        let components: Vec<Component> = (0..width)
            .map(|_| Component {
                amplitude: base.random_range(0.15..0.6),
                frequency: base.random_range(lo..=hi),
                phase: base.random_range(0.0..TAU),
                harmonic: base.random_range(0.0..0.3),
                offset: base.random_range(-0.8..0.8),
            })
            .collect();
        for (s, subject) in cfg.subjects.iter().enumerate() {
            for trial in 0..cfg.trials_per_action {
                let mut rng = ChaCha8Rng::seed_from_u64(base.random());
                let trial_phase = rng.random_range(0.0..TAU);
                let gain = 1.0 + 0.05 * s as f64 + rng.random_range(-0.05..0.05);
                let mut data = Vec::with_capacity(cfg.frames * width);
                for f in 0..cfg.frames {
                    let tau = f as f64 * dt;
                    for (d, c) in components.iter().enumerate() {
                        let joint = (d / 3) as f64;
                        let arg = TAU * c.frequency * tau + c.phase + trial_phase + coupling * joint;
                        let mut v = c.offset + gain * c.amplitude * (arg.sin() + c.harmonic * (2.0 * arg).sin());
                        if d < 3 {
                            // root translation drifts instead of oscillating
                            v += 0.5 * tau;
                        }
                        data.push(v);
                    }
                }
                trials.push(RawTrial {
                    frames: FrameMatrix::new(cfg.frames, width, data)?,
                    action: action.clone(),
                    subject: subject.clone(),
                    trial: (trial + 1).to_string(),
                    frame_period_ms: FRAME_PERIOD_MS,
                });
            }
        }
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let cfg = SynthConfig { frames: 30, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * 2 * 2);
        assert!(a.iter().all(|t| t.frames.rows() == 30 && t.width() == 18));
        assert!(a.iter().all(|t| t.frames.data().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn seeds_change_the_corpus() {
        let a = generate(&SynthConfig { frames: 10, ..Default::default() }).unwrap();
        let b = generate(&SynthConfig { frames: 10, seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a[0].frames, b[0].frames);
    }

    #[test]
    fn rejects_bad_band() {
        let cfg = SynthConfig { freq_band: (2.0, 1.0), ..Default::default() };
        assert!(generate(&cfg).is_err());
    }
}
