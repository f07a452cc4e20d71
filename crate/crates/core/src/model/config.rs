use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution kernel extent as (temporal, spatial).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelShape {
    pub temporal: usize,
    pub spatial: usize,
}

impl KernelShape {
    pub const fn new(temporal: usize, spatial: usize) -> Self {
        KernelShape { temporal, spatial }
    }

    /// The three shapes compared in the kernel ablation.
    pub const ABLATION: [KernelShape; 3] = [KernelShape::new(2, 7), KernelShape::new(7, 2), KernelShape::new(4, 4)];
}

impl fmt::Display for KernelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.temporal, self.spatial)
    }
}

impl FromStr for KernelShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parsed = s
            .split_once(['x', 'X'])
            .and_then(|(a, b)| Some(KernelShape::new(a.trim().parse().ok()?, b.trim().parse().ok()?)));
        match parsed {
            Some(k) if k.temporal > 0 && k.spatial > 0 => Ok(k),
            _ => Err(Error::Invalid(format!("kernel shape must look like 2x7, got '{s}'"))),
        }
    }
}

/// Architecture shared by both encoders, the decoder and the discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: [usize; 3],
    pub kernel: KernelShape,
    pub stride: (usize, usize),
    pub fc_out: usize,
    pub leaky_slope: f64,
    /// `false` replaces the long-term code with zeros.
    pub long_term: bool,
    pub discriminator_dropout: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: [64, 128, 128],
            kernel: KernelShape::new(2, 7),
            stride: (2, 2),
            fc_out: 512,
            leaky_slope: 0.2,
            long_term: true,
            discriminator_dropout: false,
        }
    }
}

impl ModelConfig {
    /// Small architecture used for gradient checks and desk-scale runs.
    pub fn tiny() -> Self {
        ModelConfig { channels: [8, 16, 16], fc_out: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.fc_out == 0 {
            return Err(Error::Invalid("channel counts and fc width must be positive".into()));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Invalid("strides must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Invalid(format!("leaky slope must lie in (0,1), got {}", self.leaky_slope)));
        }
        Ok(())
    }
}

/// Sequence lengths, loss weights and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub seed_len: usize,
    pub target_len: usize,
    pub window: usize,
    /// Weight of the prediction when blending with ground truth inside the
    /// short-term window during training; 1 is fully closed loop.
    pub eta: f64,
    pub lambda_l2: f64,
    pub lambda_adv: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub adversarial: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            seed_len: 50,
            target_len: 25,
            window: 20,
            eta: 1.0,
            lambda_l2: 0.001,
            lambda_adv: 0.01,
            learning_rate: 0.0002,
            batch_size: 64,
            dropout: 0.5,
            adversarial: true,
        }
    }
}

impl HyperParams {
    pub fn tiny() -> Self {
        HyperParams { seed_len: 16, target_len: 6, window: 8, batch_size: 4, ..Self::default() }
    }

    /// Adversarial weight actually applied.
    pub fn effective_lambda_adv(&self) -> f64 {
        if self.adversarial {
            self.lambda_adv
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed_len == 0 || self.target_len == 0 || self.window == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("sequence lengths and batch size must be positive".into()));
        }
        if self.window > self.seed_len {
            return Err(Error::Invalid(format!("window {} exceeds seed length {}", self.window, self.seed_len)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Invalid(format!("eta must lie in [0,1], got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout must lie in [0,1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0) || self.lambda_l2 < 0.0 || self.lambda_adv < 0.0 {
            return Err(Error::Invalid("learning rate must be positive and loss weights non-negative".into()));
        }
        Ok(())
    }
}

/// Extents of one convolution inside an encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_extent: (usize, usize),
    pub padding: (usize, usize),
    pub out_extent: (usize, usize),
}

/// Symmetric zero padding that lets a strided kernel cover `ceil(n/s)`
/// output positions.
pub fn same_padding(n: usize, kernel: usize, stride: usize) -> usize {
    let out = n.div_ceil(stride);
    let needed = ((out - 1) * stride + kernel).saturating_sub(n);
    needed.div_ceil(2)
}

/// One convolutional encoding module: three strided convolutions over the
/// (time x pose) grid followed by an affine map to a fixed-width code.
#[derive(Clone, Debug, PartialEq)]
pub struct CemConfig {
    pub input_frames: usize,
    pub pose_dim: usize,
    pub channels: [usize; 3],
    pub kernel: KernelShape,
    pub stride: (usize, usize),
    pub fc_out: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl CemConfig {
    pub fn new(input_frames: usize, pose_dim: usize, model: &ModelConfig, dropout: f64) -> Self {
        CemConfig {
            input_frames,
            pose_dim,
            channels: model.channels,
            kernel: model.kernel,
            stride: model.stride,
            fc_out: model.fc_out,
            dropout,
            leaky_slope: model.leaky_slope,
        }
    }

    pub fn layers(&self) -> Vec<LayerGeometry> {
        let mut extent = (self.input_frames, self.pose_dim);
        let mut in_channels = 1;
        let mut out = Vec::with_capacity(3);
        for &c in &self.channels {
            let padding = (
                same_padding(extent.0, self.kernel.temporal, self.stride.0),
                same_padding(extent.1, self.kernel.spatial, self.stride.1),
            );
            let out_extent = (
                (extent.0 + 2 * padding.0 - self.kernel.temporal) / self.stride.0 + 1,
                (extent.1 + 2 * padding.1 - self.kernel.spatial) / self.stride.1 + 1,
            );
            out.push(LayerGeometry { in_channels, out_channels: c, in_extent: extent, padding, out_extent });
            extent = out_extent;
            in_channels = c;
        }
        out
    }

    /// Width of the flattened last feature map.
    pub fn flat_dim(&self) -> usize {
        let last = *self.layers().last().expect("three layers");
        last.out_channels * last.out_extent.0 * last.out_extent.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_term_shape_trace() {
        let cfg = CemConfig::new(50, 54, &ModelConfig::default(), 0.5);
        let extents: Vec<_> = cfg.layers().iter().map(|l| l.out_extent).collect();
        assert_eq!(extents, vec![(25, 27), (13, 14), (7, 7)]);
        assert_eq!(cfg.flat_dim(), 128 * 7 * 7);
    }

    #[test]
    fn short_term_shape_trace() {
        let cfg = CemConfig::new(20, 54, &ModelConfig::default(), 0.5);
        let temporal: Vec<_> = cfg.layers().iter().map(|l| l.out_extent.0).collect();
        assert_eq!(temporal, vec![10, 5, 3]);
    }

    #[test]
    fn same_padding_gives_ceil_extents() {
        for n in 1..60 {
            for k in 1..8 {
                let p = same_padding(n, k, 2);
                if k > n + 2 * p {
                    continue;
                }
                assert_eq!((n + 2 * p - k) / 2 + 1, n.div_ceil(2), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn ablation_kernels_fit_small_windows() {
        for kernel in KernelShape::ABLATION {
            for window in [5, 10, 20] {
                let model = ModelConfig { kernel, ..ModelConfig::default() };
                let cfg = CemConfig::new(window, 54, &model, 0.5);
                for l in cfg.layers() {
                    assert!(kernel.temporal <= l.in_extent.0 + 2 * l.padding.0);
                    assert!(kernel.spatial <= l.in_extent.1 + 2 * l.padding.1);
                }
            }
        }
    }

    #[test]
    fn kernel_parse() {
        assert_eq!("2x7".parse::<KernelShape>().unwrap(), KernelShape::new(2, 7));
        assert_eq!(KernelShape::new(4, 4).to_string(), "4x4");
        assert!("2by7".parse::<KernelShape>().is_err());
        assert!("0x7".parse::<KernelShape>().is_err());
    }

    #[test]
    fn hyper_validation() {
        assert!(HyperParams::default().validate().is_ok());
        assert!(HyperParams { window: 51, ..Default::default() }.validate().is_err());
        assert!(HyperParams { eta: 1.5, ..Default::default() }.validate().is_err());
    }
}
