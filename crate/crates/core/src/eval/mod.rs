//! Euler-angle error at fixed horizons, the evaluation protocol and the
//! zero-velocity baseline.

mod metric;
mod predict;
mod report;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mocap::{Corpus, FrameMatrix};
use crate::model::MotionModel;
use crate::tensor::Tensor;
use crate::training::Checkpoint;

pub use metric::{euler_error, horizon_frame, horizons_within, sequence_errors, HORIZONS_MS};
pub use predict::predict_frames;
pub use report::{ActionErrors, HorizonReport, SeedWindow, AVERAGE_LABEL};

pub const DEFAULT_NUM_SEQUENCES: usize = 8;
pub const DEFAULT_EVAL_SEED: u64 = 1_234_567_890;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Windows drawn per action.
    pub num_sequences: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { num_sequences: DEFAULT_NUM_SEQUENCES, seed: DEFAULT_EVAL_SEED }
    }
}

/// One evaluated window with its raw-width prediction, truth and per-frame
/// errors.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceResult {
    pub window: SeedWindow,
    pub clip: usize,
    pub prediction: FrameMatrix,
    pub truth: FrameMatrix,
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: HorizonReport,
    pub sequences: Vec<SequenceResult>,
}

impl Evaluation {
    /// Write each predicted and true continuation as
    /// `<dir>/<action>_<k>_pred.txt` and `<action>_<k>_truth.txt`.
    pub fn write_sequences(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut counter = std::collections::BTreeMap::<&str, usize>::new();
        for s in &self.sequences {
            let k = counter.entry(&s.window.action).or_default();
            s.prediction.write(&dir.join(format!("{}_{k}_pred.txt", s.window.action)))?;
            s.truth.write(&dir.join(format!("{}_{k}_truth.txt", s.window.action)))?;
            *k += 1;
        }
        Ok(())
    }
}

/// Draw `num_sequences` windows of `seed_len + target_len` frames per
/// action, actions in sorted order. Actions without a long enough trial are
/// skipped.
pub fn eval_windows(corpus: &Corpus, seed_len: usize, target_len: usize, opts: &EvalOptions) -> Vec<(usize, usize)> {
    let need = seed_len + target_len;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    for action in corpus.actions() {
        let eligible: Vec<usize> =
            corpus.clips_for(&action).filter(|(_, c)| c.seq.frames.rows() >= need).map(|(i, _)| i).collect();
        if eligible.is_empty() {
            continue;
        }
        for _ in 0..opts.num_sequences {
            let ci = eligible[rng.random_range(0..eligible.len())];
            let start = rng.random_range(0..=corpus.clips[ci].seq.frames.rows() - need);
            out.push((ci, start));
        }
    }
    out
}

fn seed_window(corpus: &Corpus, ci: usize, start: usize) -> SeedWindow {
    let c = &corpus.clips[ci];
    SeedWindow { action: c.action.clone(), subject: c.subject.clone(), trial: c.trial.clone(), start }
}

fn summarize(
    corpus: &Corpus,
    target_len: usize,
    opts: &EvalOptions,
    per_sequence: &[(usize, usize, Vec<f64>)],
) -> Result<HorizonReport> {
    let horizons = horizons_within(target_len);
    if horizons.is_empty() {
        return Err(Error::Invalid(format!("{target_len} predicted frames reach no reporting horizon")));
    }
    let mut rows = Vec::new();
    for action in corpus.actions() {
        let mine: Vec<&Vec<f64>> =
            per_sequence.iter().filter(|(ci, _, _)| corpus.clips[*ci].action == action).map(|(_, _, e)| e).collect();
        if mine.is_empty() {
            continue;
        }
        let errors = horizons
            .iter()
            .map(|&ms| mine.iter().map(|e| e[horizon_frame(ms) - 1]).sum::<f64>() / mine.len() as f64)
            .collect();
        rows.push(ActionErrors { action, errors, sequences: mine.len() });
    }
    if rows.is_empty() {
        return Err(Error::Invalid(format!("no test trial has the {} frames one window needs", target_len)));
    }
    let windows = per_sequence.iter().map(|(ci, start, _)| seed_window(corpus, *ci, *start)).collect();
    Ok(HorizonReport::from_rows(horizons, rows, opts.seed, windows))
}

/// Evaluate an arbitrary predictor mapping normalized `[B, t, L]` seeds to
/// normalized `[B, T, L]` continuations. Errors are measured after
/// denormalization, over kept dimensions only.
pub fn evaluate_with(
    corpus: &Corpus,
    seed_len: usize,
    target_len: usize,
    opts: &EvalOptions,
    predict: &mut dyn FnMut(&Tensor) -> Result<Tensor>,
) -> Result<Evaluation> {
    let stats = &corpus.stats;
    let l = corpus.pose_dim();
    let windows = eval_windows(corpus, seed_len, target_len, opts);
    let mut sequences = Vec::with_capacity(windows.len());
    for chunk in windows.chunk_by(|a, b| corpus.clips[a.0].action == corpus.clips[b.0].action) {
        let mut seeds = Vec::with_capacity(chunk.len() * seed_len * l);
        for &(ci, start) in chunk {
            seeds.extend_from_slice(&corpus.clips[ci].seq.frames.data()[start * l..(start + seed_len) * l]);
        }
        let pred = predict(&Tensor::new(vec![chunk.len(), seed_len, l], seeds)?)?;
        if pred.shape() != [chunk.len(), target_len, l] {
            return Err(Error::shape(format!(
                "predictor returned {:?}, expected {:?}",
                pred.shape(),
                [chunk.len(), target_len, l]
            )));
        }
        for (b, &(ci, start)) in chunk.iter().enumerate() {
            let rows = pred.data()[b * target_len * l..(b + 1) * target_len * l].to_vec();
            let prediction = stats.denormalize(&FrameMatrix::new(target_len, l, rows)?)?;
            let truth = stats.denormalize(&corpus.clips[ci].seq.frames.slice_rows(start + seed_len, target_len)?)?;
            let errors = sequence_errors(&prediction, &truth, &stats.kept)?;
            sequences.push(SequenceResult {
                window: seed_window(corpus, ci, start),
                clip: ci,
                prediction,
                truth,
                errors,
            });
        }
    }
    let per: Vec<_> = sequences.iter().map(|s| (s.clip, s.window.start, s.errors.clone())).collect();
    let report = summarize(corpus, target_len, opts, &per)?;
    Ok(Evaluation { report, sequences })
}

/// Closed-loop evaluation of a model in inference mode.
pub fn evaluate(model: &MotionModel, corpus: &Corpus, opts: &EvalOptions) -> Result<Evaluation> {
    if model.pose_dim != corpus.pose_dim() {
        return Err(Error::shape(format!("model pose width {} vs corpus {}", model.pose_dim, corpus.pose_dim())));
    }
    let (t, tt) = (model.hyper.seed_len, model.hyper.target_len);
    evaluate_with(corpus, t, tt, opts, &mut |seeds| model.predict(seeds))
}

/// Evaluate a checkpoint, refusing corpora normalized with other statistics.
pub fn evaluate_checkpoint(ck: &Checkpoint, corpus: &Corpus, opts: &EvalOptions) -> Result<Evaluation> {
    ck.check_stats(&corpus.stats)?;
    evaluate(&ck.model, corpus, opts)
}

/// The constant-pose predictor, computed straight from raw frames: the last
/// seed frame is repeated and compared with the raw continuation, both with
/// masked dimensions cleared.
pub fn zero_velocity_report(
    corpus: &Corpus,
    seed_len: usize,
    target_len: usize,
    opts: &EvalOptions,
) -> Result<HorizonReport> {
    let kept = &corpus.stats.kept;
    let masked = |row: &[f64]| -> Vec<f64> { row.iter().zip(kept).map(|(v, &k)| if k { *v } else { 0.0 }).collect() };
    let mut per = Vec::new();
    for (ci, start) in eval_windows(corpus, seed_len, target_len, opts) {
        let raw = &corpus.clips[ci].raw;
        let last = masked(raw.row(start + seed_len - 1));
        let errors = (0..target_len)
            .map(|k| euler_error(&last, &masked(raw.row(start + seed_len + k)), kept))
            .collect::<Result<Vec<_>>>()?;
        per.push((ci, start, errors));
    }
    summarize(corpus, target_len, opts, &per)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::mocap::synth::{generate, SynthConfig};
    use crate::mocap::NormalizationStats;
    use crate::model::{zero, HyperParams, ModelConfig};

    fn corpus() -> Corpus {
        let cfg = SynthConfig {
            joints: 3,
            frames: 60,
            actions: vec!["jump".into(), "walk".into()],
            subjects: vec!["S5".into()],
            trials_per_action: 2,
            ..Default::default()
        };
        let trials = generate(&cfg).unwrap();
        let stats = NormalizationStats::fit_trials(&trials, 1e-4, 6).unwrap();
        Corpus::new(&trials, Arc::new(stats)).unwrap()
    }

    fn model(pose_dim: usize) -> MotionModel {
        let model = ModelConfig { channels: [2, 2, 2], fc_out: 4, ..ModelConfig::default() };
        let hyper = HyperParams { seed_len: 20, window: 8, target_len: 25, dropout: 0.0, ..HyperParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        MotionModel::init(model, hyper, pose_dim, &mut rng).unwrap()
    }

    #[test]
    fn windows_fit_and_cover_actions() {
        let c = corpus();
        let w = eval_windows(&c, 20, 25, &EvalOptions::default());
        assert_eq!(w.len(), 16);
        for &(ci, start) in &w {
            assert!(start + 45 <= c.clips[ci].seq.frames.rows());
        }
        assert_eq!(w, eval_windows(&c, 20, 25, &EvalOptions::default()));
        assert_ne!(w, eval_windows(&c, 20, 25, &EvalOptions { seed: 9, ..Default::default() }));
    }

    #[test]
    fn fresh_model_matches_zero_velocity_baseline() {
        let c = corpus();
        let m = model(c.pose_dim());
        let opts = EvalOptions::default();
        let eval = evaluate(&m, &c, &opts).unwrap();
        let baseline = zero_velocity_report(&c, 20, 25, &opts).unwrap();
        assert_eq!(eval.report.horizons_ms, HORIZONS_MS);
        assert!(eval.report.max_abs_diff(&baseline) < 1e-9, "{}\n{}", eval.report.to_table(), baseline.to_table());
        assert!(eval.report.average.iter().all(|e| *e > 0.0));
        assert_eq!(eval.report, evaluate(&m, &c, &opts).unwrap().report);
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let c = corpus();
        let windows = eval_windows(&c, 20, 10, &EvalOptions::default());
        let l = c.pose_dim();
        let mut calls = 0usize;
        let mut oracle = |seeds: &Tensor| {
            let b = seeds.shape()[0];
            let mut data = Vec::new();
            for &(ci, start) in &windows[calls..calls + b] {
                data.extend_from_slice(&c.clips[ci].seq.frames.data()[(start + 20) * l..(start + 30) * l]);
            }
            calls += b;
            Tensor::new(vec![b, 10, l], data)
        };
        let eval = evaluate_with(&c, 20, 10, &EvalOptions::default(), &mut oracle).unwrap();
        assert_eq!(eval.report.horizons_ms, [80, 160, 320, 400]);
        assert!(eval.report.average.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn zeroed_decoder_still_equals_baseline_after_randomizing_encoders() {
        let c = corpus();
        let mut m = model(c.pose_dim());
        crate::model::randomize(&mut m.generator, &mut ChaCha8Rng::seed_from_u64(4));
        zero(&mut m.generator.decoder.out);
        let opts = EvalOptions { num_sequences: 3, seed: 5 };
        let eval = evaluate(&m, &c, &opts).unwrap();
        assert!(eval.report.max_abs_diff(&zero_velocity_report(&c, 20, 25, &opts).unwrap()) < 1e-9);
    }

    #[test]
    fn checkpoint_with_other_stats_is_refused() {
        use crate::training::{AdamState, TrainConfig, ValidationState};
        let c = corpus();
        let m = model(c.pose_dim());
        let ck = Checkpoint {
            iteration: 0,
            config: TrainConfig { model: m.model.clone(), hyper: m.hyper.clone(), ..TrainConfig::default() },
            pose_dim: c.pose_dim(),
            stats_fingerprint: "not-these-stats".into(),
            adam_generator: AdamState::new(&[]),
            adam_discriminator: AdamState::new(&[]),
            model: m,
            validation: ValidationState::default(),
        };
        let err = evaluate_checkpoint(&ck, &c, &EvalOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Fingerprint { .. }));
    }

    #[test]
    fn dump_writes_dataset_files() {
        let c = corpus();
        let m = model(c.pose_dim());
        let eval = evaluate(&m, &c, &EvalOptions { num_sequences: 2, seed: 3 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        eval.write_sequences(dir.path()).unwrap();
        let back = FrameMatrix::read(&dir.path().join("walk_1_pred.txt")).unwrap();
        assert_eq!(back, eval.sequences[3].prediction);
        assert_eq!(back.cols(), c.stats.raw_dim());
    }
}
