//! Dense row-major f64 tensors.
//!
//! Everything in this crate runs at desk scale, so the tensor type stays
//! deliberately small: a shape vector plus a flat buffer, with loops written
//! left to right so reruns sum in a fixed order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    /// 1-D tensor over the given values.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element of a 2-D tensor at (row, col).
    pub fn at2(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn set2(&mut self, row: usize, col: usize, value: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col] = value;
    }

    /// Reinterpret the buffer under a new shape of equal length.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combine; shapes must match exactly.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Squared Euclidean distance, fixed left-to-right accumulation.
    pub fn sq_dist(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            let d = a - b;
            acc += d * d;
        }
        Ok(acc)
    }

    pub fn dist(&self, other: &Tensor) -> Result<f64> {
        Ok(self.sq_dist(other)?.sqrt())
    }

    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        debug_assert!(!self.data.is_empty());
        self.sum() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Resolve a broadcast between two shapes: either they match, or one side is
/// a single element that stretches over the other. Returns the output shape.
pub(crate) fn broadcast_shape<'a>(a: &'a Tensor, b: &'a Tensor) -> Result<&'a [usize]> {
    if a.shape == b.shape {
        Ok(a.shape())
    } else if a.is_scalar() {
        Ok(b.shape())
    } else if b.is_scalar() {
        Ok(a.shape())
    } else {
        Err(Error::InvalidArgument(format!(
            "shapes {:?} and {:?} are not broadcast-compatible",
            a.shape, b.shape
        )))
    }
}

/// Value of `t` at flat index `i` under scalar broadcasting.
pub(crate) fn broadcast_at(t: &Tensor, i: usize) -> f64 {
    if t.is_scalar() {
        t.data[0]
    } else {
        t.data[i]
    }
}
