//! im2col convolution kernels for `[N, C, H, W]` inputs with zero padding.

use super::dot;
use crate::error::{Error, Result};

/// Resolved extents of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: (usize, usize), padding: (usize, usize)) -> Result<Self> {
        let [batch, in_channels, height, width] = *input else {
            return Err(Error::shape(format!("conv2d input must be [N,C,H,W], got {input:?}")));
        };
        let [out_channels, kernel_in, kernel_h, kernel_w] = *kernel else {
            return Err(Error::shape(format!("conv2d kernel must be [Cout,Cin,kH,kW], got {kernel:?}")));
        };
        if kernel_in != in_channels {
            return Err(Error::shape(format!(
                "conv2d input has {in_channels} channels but kernel expects {kernel_in}"
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Invalid(format!("conv2d stride must be >= 1, got {stride:?}")));
        }
        let padded_h = height + 2 * padding.0;
        let padded_w = width + 2 * padding.1;
        if kernel_h > padded_h || kernel_w > padded_w {
            return Err(Error::shape(format!(
                "conv2d kernel {kernel_h}x{kernel_w} exceeds padded input {padded_h}x{padded_w}"
            )));
        }
        Ok(ConvGeometry {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (padded_h - kernel_h) / stride.0 + 1,
            out_w: (padded_w - kernel_w) / stride.1 + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source offset inside one sample for (channel, ky, kx) at output
    /// position (oy, ox), or `None` when it lands in the zero padding.
    #[inline]
    fn source(&self, c: usize, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.stride.0 + ky).checked_sub(self.padding.0)?;
        let x = (ox * self.stride.1 + kx).checked_sub(self.padding.1)?;
        (y < self.height && x < self.width).then(|| (c * self.height + y) * self.width + x)
    }

    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        let positions = self.positions();
        let mut row = 0;
        for c in 0..self.in_channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            dst[oy * self.out_w + ox] = self.source(c, ky, kx, oy, ox).map_or(0.0, |i| sample[i]);
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Position-major patches: row `p` holds the receptive field of output
    /// position `p`.
    fn im2row(&self, sample: &[f64], rows: &mut [f64]) {
        let patch = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let dst = &mut rows[(oy * self.out_w + ox) * patch..][..patch];
                let mut k = 0;
                for c in 0..self.in_channels {
                    for ky in 0..self.kernel_h {
                        for kx in 0..self.kernel_w {
                            dst[k] = self.source(c, ky, kx, oy, ox).map_or(0.0, |i| sample[i]);
                            k += 1;
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], sample_grad: &mut [f64]) {
        let positions = self.positions();
        let mut row = 0;
        for c in 0..self.in_channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let src = &cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some(i) = self.source(c, ky, kx, oy, ox) {
                                sample_grad[i] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `out[n,co,i,j] = bias[co] + sum input * kernel` over each receptive field.
pub fn conv2d_forward(geo: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let patch = geo.patch_len();
    let positions = geo.positions();
    let in_stride = geo.in_channels * geo.height * geo.width;
    let out_stride = geo.out_channels * positions;
    let mut out = vec![0.0; geo.batch * out_stride];
    let mut rows = vec![0.0; positions * patch];
    for n in 0..geo.batch {
        geo.im2row(&input[n * in_stride..(n + 1) * in_stride], &mut rows);
        let sample_out = &mut out[n * out_stride..(n + 1) * out_stride];
        for co in 0..geo.out_channels {
            let weights = &kernel[co * patch..(co + 1) * patch];
            let dst = &mut sample_out[co * positions..(co + 1) * positions];
            for (p, d) in dst.iter_mut().enumerate() {
                *d = bias[co] + dot(weights, &rows[p * patch..(p + 1) * patch]);
            }
        }
    }
    out
}

/// Gradients of a convolution with respect to input, kernel and bias.
pub fn conv2d_backward(
    geo: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let patch = geo.patch_len();
    let positions = geo.positions();
    let in_stride = geo.in_channels * geo.height * geo.width;
    let out_stride = geo.out_channels * positions;
    let mut grad_input = vec![0.0; input.len()];
    let mut grad_kernel = vec![0.0; kernel.len()];
    let mut grad_bias = vec![0.0; geo.out_channels];
    let mut cols = vec![0.0; patch * positions];
    let mut grad_cols = vec![0.0; patch * positions];
    for n in 0..geo.batch {
        geo.im2col(&input[n * in_stride..(n + 1) * in_stride], &mut cols);
        let g = &grad_out[n * out_stride..(n + 1) * out_stride];
        grad_cols.fill(0.0);
        for co in 0..geo.out_channels {
            let g_row = &g[co * positions..(co + 1) * positions];
            grad_bias[co] += g_row.iter().sum::<f64>();
            let weights = &kernel[co * patch..(co + 1) * patch];
            let gk = &mut grad_kernel[co * patch..(co + 1) * patch];
            for k in 0..patch {
                let col = &cols[k * positions..(k + 1) * positions];
                gk[k] += col.iter().zip(g_row).map(|(a, b)| a * b).sum::<f64>();
                let w = weights[k];
                if w != 0.0 {
                    let gc = &mut grad_cols[k * positions..(k + 1) * positions];
                    for (d, &s) in gc.iter_mut().zip(g_row) {
                        *d += w * s;
                    }
                }
            }
        }
        geo.col2im_add(&grad_cols, &mut grad_input[n * in_stride..(n + 1) * in_stride]);
    }
    (grad_input, grad_kernel, grad_bias)
}
