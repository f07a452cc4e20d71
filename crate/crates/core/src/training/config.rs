//! `key = value` configuration files covering every model, optimizer and
//! schedule setting.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HyperParams, KernelShape, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub iterations: u64,
    pub checkpoint_every: u64,
    /// Evaluate validation MSE every this many iterations; 0 disables.
    pub validate_every: u64,
    /// Stop after this many validations without improvement; 0 never stops.
    pub patience: u64,
    pub seed: u64,
    /// Global gradient-norm limit; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            iterations: 10_000,
            checkpoint_every: 1000,
            validate_every: 0,
            patience: 0,
            seed: 0,
            grad_clip: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub hyper: HyperParams,
    pub schedule: Schedule,
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

fn parse_pair(v: &str) -> Option<(usize, usize)> {
    let (a, b) = v.split_once(['x', 'X'])?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

impl TrainConfig {
    pub fn tiny() -> Self {
        TrainConfig { model: ModelConfig::tiny(), hyper: HyperParams::tiny(), schedule: Schedule::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.hyper.validate()?;
        if self.schedule.checkpoint_every == 0 {
            return Err(Error::Invalid("checkpoint_every must be positive".into()));
        }
        if let Some(c) = self.schedule.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Invalid(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Invalid(format!("bad value '{value}' for {key}"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let long = |v: &str| v.parse::<u64>().map_err(|_| bad());
        let flag = |v: &str| parse_bool(v).ok_or_else(bad);
        let (m, h, s) = (&mut self.model, &mut self.hyper, &mut self.schedule);
        match key {
            "seed_len" => h.seed_len = int(value)?,
            "target_len" => h.target_len = int(value)?,
            "window" => h.window = int(value)?,
            "eta" => h.eta = num(value)?,
            "lambda_l2" => h.lambda_l2 = num(value)?,
            "lambda_adv" => h.lambda_adv = num(value)?,
            "learning_rate" => h.learning_rate = num(value)?,
            "batch_size" => h.batch_size = int(value)?,
            "dropout" => h.dropout = num(value)?,
            "adversarial" => h.adversarial = flag(value)?,
            "channels" => {
                let c: Vec<usize> = value.split(',').map(|c| int(c.trim())).collect::<Result<_>>()?;
                m.channels = c.try_into().map_err(|_| bad())?;
            }
            "kernel" => m.kernel = value.parse::<KernelShape>()?,
            "stride" => m.stride = parse_pair(value).ok_or_else(bad)?,
            "fc_out" => m.fc_out = int(value)?,
            "leaky_slope" => m.leaky_slope = num(value)?,
            "long_term" => m.long_term = flag(value)?,
            "discriminator_dropout" => m.discriminator_dropout = flag(value)?,
            "iterations" => s.iterations = long(value)?,
            "checkpoint_every" => s.checkpoint_every = long(value)?,
            "validate_every" => s.validate_every = long(value)?,
            "patience" => s.patience = long(value)?,
            "seed" => s.seed = long(value)?,
            "grad_clip" => s.grad_clip = if value == "none" { None } else { Some(num(value)?) },
            _ => return Err(Error::Invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Settings absent from `text` keep their defaults.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected key = value, got '{line}'"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let (m, h, s) = (&self.model, &self.hyper, &self.schedule);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("seed_len", h.seed_len.to_string());
        kv("target_len", h.target_len.to_string());
        kv("window", h.window.to_string());
        kv("eta", h.eta.to_string());
        kv("lambda_l2", h.lambda_l2.to_string());
        kv("lambda_adv", h.lambda_adv.to_string());
        kv("learning_rate", h.learning_rate.to_string());
        kv("batch_size", h.batch_size.to_string());
        kv("dropout", h.dropout.to_string());
        kv("adversarial", h.adversarial.to_string());
        kv("channels", m.channels.map(|c| c.to_string()).join(","));
        kv("kernel", m.kernel.to_string());
        kv("stride", format!("{}x{}", m.stride.0, m.stride.1));
        kv("fc_out", m.fc_out.to_string());
        kv("leaky_slope", m.leaky_slope.to_string());
        kv("long_term", m.long_term.to_string());
        kv("discriminator_dropout", m.discriminator_dropout.to_string());
        kv("iterations", s.iterations.to_string());
        kv("checkpoint_every", s.checkpoint_every.to_string());
        kv("validate_every", s.validate_every.to_string());
        kv("patience", s.patience.to_string());
        kv("seed", s.seed.to_string());
        kv("grad_clip", s.grad_clip.map_or("none".into(), |c| c.to_string()));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
