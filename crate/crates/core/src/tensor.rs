//! Dense row-major arrays and convolution filter banks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Dense row-major array of `f64` with rank 1 to 4.
///
/// Images and feature maps are `[channels, height, width]`; filter banks are
/// `[c_out, c_in, s, s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::dim(format!("rank must be 1..=4, got {}", shape.len())));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.ensure_finite("Tensor::new")?;
        Ok(t)
    }

    /// # Panics
    /// If the rank is outside 1..=4.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    /// # Panics
    /// If the rank is outside 1..=4.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = check_shape(shape).expect("invalid tensor rank");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Fills by flat row-major index.
    ///
    /// # Panics
    /// If the rank is outside 1..=4.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n = check_shape(shape).expect("invalid tensor rank");
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Extents of a `[c, h, w]` tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dim(format!(
                "expected a [c, h, w] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Row-major slice of channel `c` (first axis).
    pub fn channel(&self, c: usize) -> &[f64] {
        let inner = self.data.len() / self.shape[0];
        &self.data[c * inner..(c + 1) * inner]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let inner = self.data.len() / self.shape[0];
        &mut self.data[c * inner..(c + 1) * inner]
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.into()))
        }
    }

    pub fn same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{}: shapes {:?} and {:?} differ",
                what, self.shape, other.shape
            )))
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, what)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.sum_squares())
    }
}

/// `k` kernels of spatial size `s x s` over `c_in` input channels, stored
/// as a `[c_out, c_in, s, s]` tensor. `s` is always odd.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    kernels: Tensor,
}

impl FilterBank {
    pub fn new(kernels: Tensor) -> Result<Self> {
        let [c_out, c_in, sh, sw] = kernels.shape()[..] else {
            return Err(Error::dim(format!(
                "filter bank must be [c_out, c_in, s, s], got {:?}",
                kernels.shape()
            )));
        };
        if c_out == 0 || c_in == 0 {
            return Err(Error::config("filter bank needs c_out, c_in >= 1"));
        }
        if sh != sw {
            return Err(Error::config(format!("kernels must be square, got {}x{}", sh, sw)));
        }
        if sh % 2 == 0 {
            return Err(Error::config(format!("kernel size must be odd, got {}", sh)));
        }
        Ok(FilterBank { kernels })
    }

    /// # Panics
    /// On zero extents or even `size`.
    pub fn zeros(c_out: usize, c_in: usize, size: usize) -> Self {
        Self::from_fn(c_out, c_in, size, |_| 0.0)
    }

    /// # Panics
    /// On zero extents or even `size`.
    pub fn from_fn(c_out: usize, c_in: usize, size: usize, f: impl FnMut(usize) -> f64) -> Self {
        FilterBank::new(Tensor::from_fn(&[c_out, c_in, size, size], f))
            .expect("invalid filter bank geometry")
    }

    pub fn c_out(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn size(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.kernels
    }

    pub fn into_tensor(self) -> Tensor {
        self.kernels
    }

    pub fn weights(&self) -> &[f64] {
        self.kernels.data()
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.kernels.data_mut()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Kernel `(o, i)` as a row-major `s*s` slice.
    pub fn kernel(&self, o: usize, i: usize) -> &[f64] {
        let ss = self.size() * self.size();
        let start = (o * self.c_in() + i) * ss;
        &self.kernels.data()[start..start + ss]
    }

    pub fn scaled(&self, factor: f64) -> FilterBank {
        FilterBank {
            kernels: self.kernels.scale(factor),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights().iter().all(|&w| w == 0.0)
    }
}
