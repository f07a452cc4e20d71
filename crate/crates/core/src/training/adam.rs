use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// First/second moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[&Tensor], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { beta1, beta2, epsilon, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Bias-corrected Adam update. Every gradient is checked for NaN/inf
    /// before any parameter is touched.
    pub fn update(&mut self, names: &[String], params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() || names.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, given {} params, {} grads, {} names",
                self.m.len(),
                params.len(),
                grads.len(),
                names.len()
            )));
        }
        for ((name, (p, g)), m) in names.iter().zip(params.iter().zip(grads)).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "{name}: parameter {:?}, gradient {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name} at index {i} is {}", g.data()[i])));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scale `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
