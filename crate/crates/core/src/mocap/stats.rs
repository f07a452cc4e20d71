use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::frames::{FrameMatrix, RawTrial};
use crate::error::{Error, Result};

/// Standard deviation below which a dimension counts as constant.
pub const DEFAULT_CONST_EPSILON: f64 = 1e-4;
/// Leading raw dimensions holding root translation and orientation.
pub const DEFAULT_GLOBAL_DIMS: usize = 6;

const STATS_FORMAT: &str = "convmotion-stats";
const STATS_VERSION: u32 = 1;

/// Per-dimension mean and population standard deviation pooled over the
/// training trials, plus the mask of dimensions the model sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub kept: Vec<bool>,
    pub epsilon: f64,
    pub global_dims: usize,
}

#[derive(Serialize, Deserialize)]
struct StatsDocument {
    format: String,
    version: u32,
    fingerprint: String,
    #[serde(flatten)]
    stats: NormalizationStats,
}

impl NormalizationStats {
    /// Pool every frame of every trial. Dimensions with `std < epsilon` and
    /// the first `global_dims` dimensions are masked out.
    pub fn fit(trials: &[&FrameMatrix], epsilon: f64, global_dims: usize) -> Result<Self> {
        let first = trials.first().ok_or_else(|| Error::Invalid("no trials to fit statistics on".into()))?;
        let width = first.cols();
        if let Some(bad) = trials.iter().find(|t| t.cols() != width) {
            return Err(Error::shape(format!("trial width {} differs from {width}", bad.cols())));
        }
        let count: usize = trials.iter().map(|t| t.rows()).sum();
        let mut mean = vec![0.0; width];
        for t in trials {
            for r in 0..t.rows() {
                for (m, v) in mean.iter_mut().zip(t.row(r)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; width];
        for t in trials {
            for r in 0..t.rows() {
                for ((s, v), m) in var.iter_mut().zip(t.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / count as f64).sqrt()).collect();
        let kept = std.iter().enumerate().map(|(i, s)| i >= global_dims && *s >= epsilon).collect();
        Ok(NormalizationStats { mean, std, kept, epsilon, global_dims })
    }

    pub fn fit_trials(trials: &[RawTrial], epsilon: f64, global_dims: usize) -> Result<Self> {
        let frames: Vec<&FrameMatrix> = trials.iter().map(|t| &t.frames).collect();
        Self::fit(&frames, epsilon, global_dims)
    }

    pub fn raw_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn reduced_dim(&self) -> usize {
        self.kept.iter().filter(|k| **k).count()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.kept.iter().enumerate().filter_map(|(i, k)| k.then_some(i)).collect()
    }

    /// Short stable digest of every field.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.epsilon.to_bits().to_le_bytes());
        h.update((self.global_dims as u64).to_le_bytes());
        for (i, ((m, s), k)) in self.mean.iter().zip(&self.std).zip(&self.kept).enumerate() {
            h.update((i as u64).to_le_bytes());
            h.update(m.to_bits().to_le_bytes());
            h.update(s.to_bits().to_le_bytes());
            h.update([*k as u8]);
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Normalize kept dimensions of one frame into `out`.
    pub fn normalize_frame(&self, raw: &[f64], out: &mut Vec<f64>) {
        for i in self.kept_indices() {
            out.push((raw[i] - self.mean[i]) / self.std[i]);
        }
    }

    pub fn normalize(self: &Arc<Self>, frames: &FrameMatrix) -> Result<MotionSequence> {
        if frames.cols() != self.raw_dim() {
            return Err(Error::shape(format!(
                "trial has {} dimensions, statistics expect {}",
                frames.cols(),
                self.raw_dim()
            )));
        }
        let kept = self.kept_indices();
        if kept.is_empty() {
            return Err(Error::Invalid("every dimension is masked out".into()));
        }
        let mut data = Vec::with_capacity(frames.rows() * kept.len());
        for r in 0..frames.rows() {
            let row = frames.row(r);
            data.extend(kept.iter().map(|&i| (row[i] - self.mean[i]) / self.std[i]));
        }
        Ok(MotionSequence { frames: FrameMatrix::new(frames.rows(), kept.len(), data)?, stats: Arc::clone(self) })
    }

    /// Map reduced normalized frames back to raw width; masked dimensions
    /// become exactly zero.
    pub fn denormalize(&self, frames: &FrameMatrix) -> Result<FrameMatrix> {
        let kept = self.kept_indices();
        if frames.cols() != kept.len() {
            return Err(Error::shape(format!(
                "sequence has {} dimensions, statistics keep {}",
                frames.cols(),
                kept.len()
            )));
        }
        let width = self.raw_dim();
        let mut data = vec![0.0; frames.rows() * width];
        for r in 0..frames.rows() {
            let dst = &mut data[r * width..(r + 1) * width];
            for (&i, v) in kept.iter().zip(frames.row(r)) {
                dst[i] = v * self.std[i] + self.mean[i];
            }
        }
        FrameMatrix::new(frames.rows(), width, data)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = StatsDocument {
            format: STATS_FORMAT.into(),
            version: STATS_VERSION,
            fingerprint: self.fingerprint(),
            stats: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StatsDocument = serde_json::from_str(text)?;
        if doc.format != STATS_FORMAT || doc.version != STATS_VERSION {
            return Err(Error::Format(format!(
                "expected {STATS_FORMAT} v{STATS_VERSION}, found {} v{}",
                doc.format, doc.version
            )));
        }
        let n = doc.stats.mean.len();
        if doc.stats.std.len() != n || doc.stats.kept.len() != n {
            return Err(Error::Format("mean, std and mask lengths differ".into()));
        }
        let found = doc.stats.fingerprint();
        if found != doc.fingerprint {
            return Err(Error::Fingerprint { expected: doc.fingerprint, found });
        }
        Ok(doc.stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Frames in normalized, reduced space.
#[derive(Clone, Debug)]
pub struct MotionSequence {
    pub frames: FrameMatrix,
    pub stats: Arc<NormalizationStats>,
}

impl MotionSequence {
    pub fn pose_dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn denormalize(&self) -> Result<FrameMatrix> {
        self.stats.denormalize(&self.frames)
    }
}
