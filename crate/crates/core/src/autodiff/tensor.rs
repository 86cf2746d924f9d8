//! Dense row-major value buffers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An n-dimensional value buffer in row-major order. Shape extents are
/// always >= 1; a scalar is represented as shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("extents must be >= 1, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, values: vec![S::zero(); numel] }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![1], values: vec![value] }
    }

    pub fn vector(values: Vec<S>) -> Self {
        Tensor { shape: vec![values.len()], values }
    }

    /// Row-major `rows x cols` matrix.
    pub fn matrix(rows: usize, cols: usize, values: Vec<S>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a `[1]`-shaped tensor.
    pub fn item(&self) -> Result<S> {
        if self.values.len() != 1 {
            return Err(Error::Shape(format!("expected scalar, shape {:?}", self.shape)));
        }
        Ok(self.values[0])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_value_count_must_agree() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn scalar_is_shape_one() {
        let t = Tensor::scalar(3.5f64);
        assert_eq!(t.shape(), &[1]);
        assert_eq!(t.item().unwrap(), 3.5);
    }
}
