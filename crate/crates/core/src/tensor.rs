//! N-dimensional `f64` tensors used for parameter storage, checkpoints and
//! random draws.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SeededRng;

/// Row-major tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Validates the shape against the data length and rejects NaN/Inf.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "tensor of shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {pos}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape.as_slice() {
            [r, c] => Matrix::from_vec(*r, *c, self.data.clone()),
            other => Err(Error::DimensionMismatch(format!(
                "expected a rank-2 tensor, got shape {other:?}"
            ))),
        }
    }
}

impl From<&Matrix> for Tensor {
    fn from(m: &Matrix) -> Self {
        Tensor {
            shape: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }
}

/// Tensor of i.i.d. standard normal draws.
pub fn gaussian_sample(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: rng.normal_vec(len),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.to_matrix().unwrap()[(1, 0)], 3.0);
        assert!(Tensor::vector(vec![1.0]).unwrap().to_matrix().is_err());
    }

    #[test]
    fn empty_sample() {
        let mut rng = SeededRng::new(0);
        let t = gaussian_sample(&mut rng, &[0]);
        assert!(t.is_empty());
        assert_eq!(t.shape(), &[0]);
    }

    #[test]
    fn sample_moments() {
        let mut rng = SeededRng::new(0);
        let t = gaussian_sample(&mut rng, &[100_000]);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn sample_is_reproducible() {
        let a = gaussian_sample(&mut SeededRng::new(42), &[3, 7]);
        let b = gaussian_sample(&mut SeededRng::new(42), &[3, 7]);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
