//! Dense row-major tensors of 32- or 64-bit reals.
//!
//! Deliberately small: no broadcasting beyond trailing-axis gain/bias (which
//! the tape ops handle explicitly), no views, no strides. Shapes are checked
//! at op boundaries and errors name both shapes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::{real, Real};

/// Errors raised by tensor and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// A binary op received operands whose shapes cannot be combined.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An op precondition failed; `detail` names the offending quantity.
    Invalid { op: &'static str, detail: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            TensorError::Invalid { op, detail } => write!(f, "{op}: {detail}"),
        }
    }
}

impl core::error::Error for TensorError {}

pub(crate) fn invalid(op: &'static str, detail: impl fmt::Display) -> TensorError {
    TensorError::Invalid {
        op,
        detail: format!("{detail}"),
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(invalid(
                "from_vec",
                format!("shape {shape:?} wants {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Gaussian-filled tensor, N(0, std^2).
    pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0f64, std).expect("std finite");
        let data = (0..shape.iter().product())
            .map(|_| real::<T>(normal.sample(rng)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Uniform-filled tensor over [lo, hi).
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..shape.iter().product())
            .map(|_| real::<T>(rng.gen_range(lo..hi)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Number of rows when viewed as 2-D ([rows, cols]); 1-D is one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    /// Row length when viewed as 2-D.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    /// 2-D transpose.
    pub fn transposed(&self) -> Tensor<T> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn iter(&self) -> core::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Max |x| over all elements.
    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    /// Frobenius norm.
    pub fn frob_norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Convert element type (f32 <-> f64).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| U::from_f64(x.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

/// Largest elementwise |a - b| between two equally-shaped tensors.
pub fn max_abs_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff shape mismatch");
    a.data
        .iter()
        .zip(&b.data)
        .fold(T::zero(), |m, (&x, &y)| {
            let d = (x - y).abs();
            if d > m {
                d
            } else {
                m
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn from_vec_checks_numel() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::Invalid { .. }));
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![1.0; 6]).is_ok());
    }

    #[test]
    fn transpose_roundtrip() {
        let mut rng = stream(1, Stream::Test(0));
        let t = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng);
        assert_eq!(t.transposed().transposed(), t);
    }
}
