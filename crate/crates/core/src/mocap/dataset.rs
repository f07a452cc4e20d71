//! On-disk corpus layout: `<root>/<subject>/<action>_<trial>.txt`, plus a
//! `manifest.txt` naming the split.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::frames::{FrameMatrix, RawTrial};
use super::stats::{MotionSequence, NormalizationStats};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const STATS_FILE: &str = "stats.json";

/// Which subjects are held out, which actions are used, and how the raw
/// recordings are subsampled to the 40 ms frame period.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub test_subjects: Vec<String>,
    /// `None` trains on every subject not held out.
    pub train_subjects: Option<Vec<String>>,
    /// `None` uses every action found.
    pub actions: Option<Vec<String>>,
    pub subsample: usize,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest { test_subjects: vec!["S5".into()], train_subjects: None, actions: None, subsample: 1 }
    }
}

fn list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let mut m = Manifest::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse { line: idx + 1, message: format!("expected key = value, got '{line}'") });
            };
            let value = value.trim();
            match key.trim() {
                "test_subjects" => m.test_subjects = list(value),
                "train_subjects" => m.train_subjects = Some(list(value)),
                "actions" => m.actions = Some(list(value)),
                "subsample" => {
                    m.subsample = value.parse().ok().filter(|v| *v >= 1).ok_or_else(|| Error::Parse {
                        line: idx + 1,
                        message: format!("subsample must be a positive integer, got '{value}'"),
                    })?
                }
                other => {
                    return Err(Error::Parse { line: idx + 1, message: format!("unknown manifest key '{other}'") })
                }
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# convmotion dataset manifest\n");
        writeln!(out, "test_subjects = {}", self.test_subjects.join(",")).unwrap();
        if let Some(t) = &self.train_subjects {
            writeln!(out, "train_subjects = {}", t.join(",")).unwrap();
        }
        if let Some(a) = &self.actions {
            writeln!(out, "actions = {}", a.join(",")).unwrap();
        }
        writeln!(out, "subsample = {}", self.subsample).unwrap();
        out
    }

    fn is_test(&self, subject: &str) -> bool {
        self.test_subjects.iter().any(|s| s == subject)
    }

    fn is_train(&self, subject: &str) -> bool {
        match &self.train_subjects {
            Some(t) => t.iter().any(|s| s == subject),
            None => !self.is_test(subject),
        }
    }

    fn uses_action(&self, action: &str) -> bool {
        self.actions.as_ref().is_none_or(|a| a.iter().any(|x| x == action))
    }
}

/// Every trial under a dataset root, split according to its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub trials: Vec<RawTrial>,
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

/// Split a file stem `walking_1` into (`walking`, `1`).
fn split_stem(stem: &str) -> Option<(&str, &str)> {
    let (action, trial) = stem.rsplit_once('_')?;
    (!action.is_empty() && !trial.is_empty()).then_some((action, trial))
}

impl Dataset {
    /// Load every trial; a missing manifest means the default split.
    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest_path = root.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            Manifest::parse(&text)?
        } else {
            Manifest::default()
        };
        let mut trials = Vec::new();
        for subject_dir in read_dir_sorted(root)? {
            if !subject_dir.is_dir() {
                continue;
            }
            let subject = subject_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            for file in read_dir_sorted(&subject_dir)? {
                if file.extension().and_then(|e| e.to_str()) != Some("txt") {
                    continue;
                }
                let stem = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let Some((action, trial)) = split_stem(&stem) else {
                    continue;
                };
                if !manifest.uses_action(action) {
                    continue;
                }
                let frames = FrameMatrix::read(&file)?.subsample(manifest.subsample);
                trials.push(RawTrial {
                    frames,
                    action: action.to_string(),
                    subject: subject.clone(),
                    trial: trial.to_string(),
                    frame_period_ms: super::frames::FRAME_PERIOD_MS,
                });
            }
        }
        if trials.is_empty() {
            return Err(Error::Invalid(format!("no <subject>/<action>_<trial>.txt files under {}", root.display())));
        }
        Ok(Dataset { root: root.to_path_buf(), manifest, trials })
    }

    pub fn train(&self) -> Vec<RawTrial> {
        self.trials.iter().filter(|t| self.manifest.is_train(&t.subject)).cloned().collect()
    }

    pub fn test(&self) -> Vec<RawTrial> {
        self.trials.iter().filter(|t| self.manifest.is_test(&t.subject)).cloned().collect()
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join(STATS_FILE)
    }
}

/// Write trials in the dataset layout together with a manifest.
pub fn write_corpus(root: &Path, trials: &[RawTrial], manifest: &Manifest) -> Result<()> {
    for t in trials {
        let dir = root.join(&t.subject);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        t.frames.write(&dir.join(format!("{}_{}.txt", t.action, t.trial)))?;
    }
    let path = root.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))
}

/// One normalized trial kept alongside its raw frames.
#[derive(Clone, Debug)]
pub struct Clip {
    pub action: String,
    pub subject: String,
    pub trial: String,
    pub seq: MotionSequence,
    pub raw: FrameMatrix,
}

/// Trials normalized with a shared set of statistics.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub clips: Vec<Clip>,
    pub stats: Arc<NormalizationStats>,
}

impl Corpus {
    pub fn new(trials: &[RawTrial], stats: Arc<NormalizationStats>) -> Result<Corpus> {
        if trials.is_empty() {
            return Err(Error::Invalid("empty corpus".into()));
        }
        let clips = trials
            .iter()
            .map(|t| {
                Ok(Clip {
                    action: t.action.clone(),
                    subject: t.subject.clone(),
                    trial: t.trial.clone(),
                    seq: stats.normalize(&t.frames)?,
                    raw: t.frames.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Corpus { clips, stats })
    }

    pub fn pose_dim(&self) -> usize {
        self.stats.reduced_dim()
    }

    /// Distinct action labels, sorted.
    pub fn actions(&self) -> Vec<String> {
        self.clips.iter().map(|c| c.action.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn clips_for<'a>(&'a self, action: &'a str) -> impl Iterator<Item = (usize, &'a Clip)> + 'a {
        self.clips.iter().enumerate().filter(move |(_, c)| c.action == action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mocap::synth::{generate, SynthConfig};

    #[test]
    fn manifest_round_trip_and_errors() {
        let m = Manifest {
            test_subjects: vec!["S5".into()],
            train_subjects: Some(vec!["S1".into(), "S6".into()]),
            actions: Some(vec!["walking".into()]),
            subsample: 2,
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("bogus = 1").is_err());
        assert!(Manifest::parse("subsample = 0").is_err());
        assert!(Manifest::parse("no equals sign").is_err());
    }

    #[test]
    fn stem_split() {
        assert_eq!(split_stem("walking_1"), Some(("walking", "1")));
        assert_eq!(split_stem("walking_dog_2"), Some(("walking_dog", "2")));
        assert_eq!(split_stem("walking"), None);
    }

    #[test]
    fn corpus_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let trials = generate(&SynthConfig { frames: 12, ..Default::default() }).unwrap();
        write_corpus(dir.path(), &trials, &Manifest::default()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.trials.len(), trials.len());
        assert!(ds.test().iter().all(|t| t.subject == "S5"));
        assert!(ds.train().iter().all(|t| t.subject == "S1"));
        assert_eq!(ds.train().len() + ds.test().len(), trials.len());
        for t in &trials {
            let found = ds
                .trials
                .iter()
                .find(|d| d.subject == t.subject && d.action == t.action && d.trial == t.trial)
                .unwrap();
            assert_eq!(found.frames, t.frames);
        }
    }

    #[test]
    fn empty_root_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Dataset::open(dir.path()).is_err());
    }
}
