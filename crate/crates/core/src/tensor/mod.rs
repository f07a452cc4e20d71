//! Dense row-major arrays and a reverse-mode tape over the handful of
//! operations the motion model needs.

mod conv;
mod gradcheck;
mod tape;

pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry};
pub use gradcheck::{
    grad_check, grad_check_many, relative_error, GradCheckOptions, GradCheckReport, ParamCheck, Probe,
};
pub use tape::{Gradients, Mode, Tape, Var};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inner product with eight independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    for (x, y) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut sum = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in n - n % 8..n {
        sum += a[i] * b[i];
    }
    sum
}

/// Dense n-dimensional array of `f64`, row-major. Clones share storage
/// until one of them is written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("extents must be positive, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!("shape {shape:?} holds {numel} values but {} were given", data.len())));
        }
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "bad shape {shape:?}");
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![value; numel]) }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![value]) }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_data(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!("expected a scalar, got shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(other.data.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_extent_product() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::new(vec![2, 3], vec![0.0; 5]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::new(vec![2, 0], vec![]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::new(vec![], vec![1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f64);
        let r = t.clone().reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn item_requires_one_element() {
        assert_eq!(Tensor::scalar(2.5).item().unwrap(), 2.5);
        assert!(Tensor::zeros(&[2]).item().is_err());
    }
}
