use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mocap::{FrameMatrix, NormalizationStats};
use crate::model::MotionModel;
use crate::tensor::Tensor;

/// Predicted raw frames anchored on the last seed frame: kept dimensions
/// move by the predicted normalized displacement times their deviation,
/// masked dimensions hold the last seed values.
fn anchored_frames(
    stats: &NormalizationStats,
    last_raw: &[f64],
    last_norm: &[f64],
    pred: &[f64],
    target_len: usize,
) -> Result<FrameMatrix> {
    let kept = stats.kept_indices();
    let l = kept.len();
    let mut data = Vec::with_capacity(target_len * last_raw.len());
    for k in 0..target_len {
        let mut row = last_raw.to_vec();
        for (j, &i) in kept.iter().enumerate() {
            row[i] = last_raw[i] + (pred[k * l + j] - last_norm[j]) * stats.std[i];
        }
        data.extend(row);
    }
    FrameMatrix::new(target_len, last_raw.len(), data)
}

/// Continue raw-width `frames` by `target_len` raw-width frames, seeding the
/// model with their last `seed_len` rows.
pub fn predict_frames(
    model: &MotionModel,
    stats: &Arc<NormalizationStats>,
    frames: &FrameMatrix,
) -> Result<FrameMatrix> {
    let (t, tt) = (model.hyper.seed_len, model.hyper.target_len);
    if frames.rows() < t {
        return Err(Error::Invalid(format!("{} seed frames given, the model needs {t}", frames.rows())));
    }
    if stats.reduced_dim() != model.pose_dim {
        return Err(Error::shape(format!(
            "statistics keep {} dimensions, the model expects {}",
            stats.reduced_dim(),
            model.pose_dim
        )));
    }
    let seed = frames.slice_rows(frames.rows() - t, t)?;
    let norm = stats.normalize(&seed)?;
    let seeds = Tensor::new(vec![1, t, model.pose_dim], norm.frames.data().to_vec())?;
    let pred = model.predict(&seeds)?;
    anchored_frames(stats, seed.row(t - 1), norm.frames.row(t - 1), pred.data(), tt)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mocap::synth::{generate, SynthConfig};
    use crate::model::{randomize, HyperParams, ModelConfig};

    #[test]
    fn zero_displacement_reproduces_last_seed_frame() {
        let stats = NormalizationStats {
            mean: vec![0.1, 0.2, 0.3, 0.4],
            std: vec![1.0, 0.3, 1.0, 0.7],
            kept: vec![false, true, false, true],
            epsilon: 1e-4,
            global_dims: 1,
        };
        let last = [1.5, 0.35, -0.2, 0.9];
        let norm = [(0.35 - 0.2) / 0.3, (0.9 - 0.4) / 0.7];
        let pred = [norm, norm, norm].concat();
        let f = anchored_frames(&stats, &last, &norm, &pred, 3).unwrap();
        for r in 0..3 {
            assert_eq!(f.row(r), last);
        }
    }

    #[test]
    fn matches_denormalized_model_output() {
        let trials = generate(&SynthConfig::default()).unwrap();
        let stats = Arc::new(NormalizationStats::fit_trials(&trials, 1e-4, 6).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hyper = HyperParams { dropout: 0.0, ..HyperParams::tiny() };
        let mut model = MotionModel::init(ModelConfig::tiny(), hyper, stats.reduced_dim(), &mut rng).unwrap();
        randomize(&mut model.generator, &mut rng);
        let frames = trials[0].frames.slice_rows(0, 20).unwrap();
        let out = predict_frames(&model, &stats, &frames).unwrap();
        assert_eq!((out.rows(), out.cols()), (6, frames.cols()));

        let seed = stats.normalize(&frames.slice_rows(4, 16).unwrap()).unwrap();
        let pred = model.predict(&Tensor::new(vec![1, 16, seed.pose_dim()], seed.frames.data().to_vec()).unwrap());
        let pred = pred.unwrap();
        let reference = stats.denormalize(&FrameMatrix::new(6, seed.pose_dim(), pred.into_data()).unwrap()).unwrap();
        for r in 0..6 {
            for (i, (a, b)) in out.row(r).iter().zip(reference.row(r)).enumerate() {
                if stats.kept[i] {
                    assert!((a - b).abs() < 1e-12, "frame {r} dim {i}: {a} vs {b}");
                } else {
                    assert_eq!(*a, frames.row(19)[i]);
                }
            }
        }
        assert!(predict_frames(&model, &stats, &frames.slice_rows(0, 15).unwrap()).is_err());
    }
}
