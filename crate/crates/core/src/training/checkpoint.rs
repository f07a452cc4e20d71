//! Checkpoint container: an 8-byte magic, a little-endian u64 header length,
//! a JSON header naming every tensor and its shape, then the tensors' values
//! as little-endian f64 in header order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::mocap::NormalizationStats;
use crate::model::{MotionModel, Parameters};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CMCKPT\0\x01";
const FORMAT: &str = "convmotion-checkpoint";
const VERSION: u32 = 1;

/// Early-stopping bookkeeping carried across resumes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationState {
    pub best: Option<f64>,
    pub stale: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub config: TrainConfig,
    pub pose_dim: usize,
    pub stats_fingerprint: String,
    pub model: MotionModel,
    pub adam_generator: AdamState,
    pub adam_discriminator: AdamState,
    pub validation: ValidationState,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    iteration: u64,
    config: TrainConfig,
    pose_dim: usize,
    stats_fingerprint: String,
    validation: ValidationState,
    adam_generator: AdamMeta,
    adam_discriminator: AdamMeta,
    tensors: Vec<Entry>,
}

fn meta(a: &AdamState) -> AdamMeta {
    AdamMeta { beta1: a.beta1, beta2: a.beta2, epsilon: a.epsilon, step: a.step }
}

impl Checkpoint {
    /// Every stored tensor in payload order.
    fn entries(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.model.generator.named_tensors("generator.", &mut out);
        self.model.discriminator.named_tensors("discriminator", &mut out);
        let gen_names = self.model.generator.names("");
        let disc_names = self.model.discriminator.names("");
        for (tag, adam, names) in
            [("generator", &self.adam_generator, &gen_names), ("discriminator", &self.adam_discriminator, &disc_names)]
        {
            for (n, t) in names.iter().zip(&adam.m) {
                out.push((format!("adam.{tag}.m.{}", n.trim_start_matches('.')), t));
            }
            for (n, t) in names.iter().zip(&adam.v) {
                out.push((format!("adam.{tag}.v.{}", n.trim_start_matches('.')), t));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries = self.entries();
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            iteration: self.iteration,
            config: self.config.clone(),
            pose_dim: self.pose_dim,
            stats_fingerprint: self.stats_fingerprint.clone(),
            validation: self.validation.clone(),
            adam_generator: meta(&self.adam_generator),
            adam_discriminator: meta(&self.adam_discriminator),
            tensors: entries.iter().map(|(n, t)| Entry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = entries.iter().map(|(_, t)| t.numel() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in entries {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(bad(&format!("unsupported format {} v{}", header.format, header.version)));
        }
        header.config.validate()?;

        let mut offset = 16 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = bytes.get(offset..offset + 8 * n).ok_or_else(|| bad(&format!("truncated at {}", e.name)))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(Tensor::new(e.shape.clone(), data)?);
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }

        let cfg = &header.config;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = MotionModel::init(cfg.model.clone(), cfg.hyper.clone(), header.pose_dim, &mut rng)?;
        let gen_names = model.generator.names("");
        let disc_names = model.discriminator.names("");
        let (ng, nd) = (gen_names.len(), disc_names.len());
        if tensors.len() != 3 * (ng + nd) {
            return Err(bad(&format!("{} tensors stored, architecture needs {}", tensors.len(), 3 * (ng + nd))));
        }
        let mut expected = Vec::new();
        model.generator.named_tensors("generator.", &mut expected);
        model.discriminator.named_tensors("discriminator", &mut expected);
        for ((want, _), got) in expected.iter().zip(&header.tensors) {
            if *want != got.name {
                return Err(bad(&format!("expected tensor {want}, found {}", got.name)));
            }
        }
        let mut rest = tensors.into_iter();
        let gen: Vec<Tensor> = rest.by_ref().take(ng).collect();
        let disc: Vec<Tensor> = rest.by_ref().take(nd).collect();
        model.generator.assign(&gen)?;
        model.discriminator.assign(&disc)?;
        let adam = |m: &AdamMeta, rest: &mut std::vec::IntoIter<Tensor>, n: usize| AdamState {
            beta1: m.beta1,
            beta2: m.beta2,
            epsilon: m.epsilon,
            step: m.step,
            m: rest.by_ref().take(n).collect(),
            v: rest.by_ref().take(n).collect(),
        };
        let adam_generator = adam(&header.adam_generator, &mut rest, ng);
        let adam_discriminator = adam(&header.adam_discriminator, &mut rest, nd);
        for (a, p) in adam_generator.m.iter().chain(&adam_generator.v).zip(model.generator.tensors().iter().cycle()) {
            if a.shape() != p.shape() {
                return Err(bad("generator optimizer state does not match its parameters"));
            }
        }
        for (a, p) in
            adam_discriminator.m.iter().chain(&adam_discriminator.v).zip(model.discriminator.tensors().iter().cycle())
        {
            if a.shape() != p.shape() {
                return Err(bad("discriminator optimizer state does not match its parameters"));
            }
        }

        Ok(Checkpoint {
            iteration: header.iteration,
            config: header.config,
            pose_dim: header.pose_dim,
            stats_fingerprint: header.stats_fingerprint,
            model,
            adam_generator,
            adam_discriminator,
            validation: header.validation,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Load and refuse checkpoints trained under different statistics.
    pub fn load_for(path: &Path, stats: &NormalizationStats) -> Result<Checkpoint> {
        let ck = Self::load(path)?;
        ck.check_stats(stats)?;
        Ok(ck)
    }

    pub fn check_stats(&self, stats: &NormalizationStats) -> Result<()> {
        let found = stats.fingerprint();
        if found != self.stats_fingerprint {
            return Err(Error::Fingerprint { expected: self.stats_fingerprint.clone(), found });
        }
        if stats.reduced_dim() != self.pose_dim {
            return Err(Error::shape(format!(
                "checkpoint pose width {} vs statistics {}",
                self.pose_dim,
                stats.reduced_dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::randomize;

    fn sample() -> Checkpoint {
        let mut config = TrainConfig::tiny();
        config.hyper.seed_len = 8;
        config.hyper.window = 4;
        config.hyper.target_len = 3;
        config.model.channels = [2, 2, 2];
        config.model.fc_out = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = MotionModel::init(config.model.clone(), config.hyper.clone(), 5, &mut rng).unwrap();
        randomize(&mut model.generator, &mut rng);
        let mut adam_generator = AdamState::new(&model.generator.tensors());
        adam_generator.step = 7;
        randomize(&mut AdamMoments(&mut adam_generator), &mut rng);
        let adam_discriminator = AdamState::new(&model.discriminator.tensors());
        Checkpoint {
            iteration: 42,
            config,
            pose_dim: 5,
            stats_fingerprint: "0123456789abcdef".into(),
            model,
            adam_generator,
            adam_discriminator,
            validation: ValidationState { best: Some(0.5), stale: 2 },
        }
    }

    struct AdamMoments<'a>(&'a mut AdamState);

    impl Parameters for AdamMoments<'_> {
        fn named_tensors<'a>(&'a self, _: &str, _: &mut Vec<(String, &'a Tensor)>) {}
        fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
            out.extend(self.0.m.iter_mut().chain(self.0.v.iter_mut()));
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
    }

    #[test]
    fn fingerprint_mismatch_refused() {
        let ck = sample();
        let stats = NormalizationStats {
            mean: vec![0.0; 5],
            std: vec![1.0; 5],
            kept: vec![true; 5],
            epsilon: 1e-4,
            global_dims: 0,
        };
        let err = ck.check_stats(&stats).unwrap_err();
        assert!(matches!(err, Error::Fingerprint { .. }));
    }
}
