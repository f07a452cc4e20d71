use rand::Rng;

use crate::error::{Error, Result};
use crate::mocap::{Clip, Corpus};
use crate::tensor::Tensor;

/// Seed/target windows cut from contiguous stretches of single trials.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, t, L]`
    pub seeds: Tensor,
    /// `[B, T, L]`
    pub targets: Tensor,
    pub actions: Vec<String>,
    /// `(clip index, first frame)` of each window.
    pub origins: Vec<(usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Cut the listed windows out of `corpus`.
    pub fn from_windows(
        corpus: &Corpus,
        windows: &[(usize, usize)],
        seed_len: usize,
        target_len: usize,
    ) -> Result<Batch> {
        if windows.is_empty() {
            return Err(Error::Invalid("a batch needs at least one window".into()));
        }
        let l = corpus.pose_dim();
        let mut seeds = Vec::with_capacity(windows.len() * seed_len * l);
        let mut targets = Vec::with_capacity(windows.len() * target_len * l);
        let mut actions = Vec::with_capacity(windows.len());
        for &(ci, start) in windows {
            let clip = corpus.clips.get(ci).ok_or_else(|| Error::Invalid(format!("no clip {ci}")))?;
            let frames = &clip.seq.frames;
            if start + seed_len + target_len > frames.rows() {
                return Err(Error::Invalid(format!(
                    "window at {start} of length {} overruns {}/{}_{} ({} frames)",
                    seed_len + target_len,
                    clip.subject,
                    clip.action,
                    clip.trial,
                    frames.rows()
                )));
            }
            let data = frames.data();
            seeds.extend_from_slice(&data[start * l..(start + seed_len) * l]);
            targets.extend_from_slice(&data[(start + seed_len) * l..(start + seed_len + target_len) * l]);
            actions.push(clip.action.clone());
        }
        let b = windows.len();
        Ok(Batch {
            seeds: Tensor::new(vec![b, seed_len, l], seeds)?,
            targets: Tensor::new(vec![b, target_len, l], targets)?,
            actions,
            origins: windows.to_vec(),
        })
    }
}

/// Draws windows by picking a trial uniformly, then a start offset
/// uniformly. Trials too short for one window are skipped.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    eligible: Vec<usize>,
    seed_len: usize,
    target_len: usize,
}

fn long_enough(clip: &Clip, need: usize) -> bool {
    clip.seq.frames.rows() >= need
}

impl BatchSampler {
    pub fn new(corpus: &Corpus, seed_len: usize, target_len: usize) -> Result<Self> {
        let need = seed_len + target_len;
        let eligible: Vec<usize> =
            corpus.clips.iter().enumerate().filter(|(_, c)| long_enough(c, need)).map(|(i, _)| i).collect();
        if eligible.is_empty() {
            return Err(Error::Invalid(format!("no trial has the {need} frames one training window needs")));
        }
        Ok(BatchSampler { eligible, seed_len, target_len })
    }

    pub fn window<R: Rng + ?Sized>(&self, corpus: &Corpus, rng: &mut R) -> (usize, usize) {
        let ci = self.eligible[rng.random_range(0..self.eligible.len())];
        let max_start = corpus.clips[ci].seq.frames.rows() - self.seed_len - self.target_len;
        (ci, rng.random_range(0..=max_start))
    }

    pub fn sample<R: Rng + ?Sized>(&self, corpus: &Corpus, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let windows: Vec<_> = (0..batch_size).map(|_| self.window(corpus, rng)).collect();
        Batch::from_windows(corpus, &windows, self.seed_len, self.target_len)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mocap::synth::{generate, SynthConfig};
    use crate::mocap::NormalizationStats;

    fn corpus(frames: usize) -> Corpus {
        let cfg = SynthConfig {
            frames,
            actions: vec!["a".into(), "b".into(), "c".into()],
            subjects: vec!["S1".into()],
            ..Default::default()
        };
        let trials = generate(&cfg).unwrap();
        let stats = NormalizationStats::fit_trials(&trials, 1e-4, 6).unwrap();
        Corpus::new(&trials, Arc::new(stats)).unwrap()
    }

    #[test]
    fn windows_are_contiguous_slices() {
        let c = corpus(40);
        let sampler = BatchSampler::new(&c, 10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sampler.sample(&c, 8, &mut rng).unwrap();
        let l = c.pose_dim();
        assert_eq!(b.seeds.shape(), &[8, 10, l]);
        assert_eq!(b.targets.shape(), &[8, 5, l]);
        for (i, &(ci, start)) in b.origins.iter().enumerate() {
            let frames = &c.clips[ci].seq.frames;
            for k in 0..10 {
                assert_eq!(&b.seeds.data()[(i * 10 + k) * l..(i * 10 + k + 1) * l], frames.row(start + k));
            }
            for k in 0..5 {
                assert_eq!(&b.targets.data()[(i * 5 + k) * l..(i * 5 + k + 1) * l], frames.row(start + 10 + k));
            }
            assert_eq!(b.actions[i], c.clips[ci].action);
        }
    }

    #[test]
    fn every_action_is_sampled() {
        let c = corpus(40);
        let sampler = BatchSampler::new(&c, 10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = BTreeSet::new();
        for _ in 0..1000 {
            seen.extend(sampler.sample(&c, 4, &mut rng).unwrap().actions);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), c.actions());
    }

    #[test]
    fn exact_length_trials_use_offset_zero() {
        let c = corpus(15);
        let sampler = BatchSampler::new(&c, 10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sampler.sample(&c, 16, &mut rng).unwrap().origins.iter().all(|o| o.1 == 0));
    }

    #[test]
    fn short_corpus_is_rejected() {
        let c = corpus(12);
        assert!(BatchSampler::new(&c, 10, 5).is_err());
    }
}
